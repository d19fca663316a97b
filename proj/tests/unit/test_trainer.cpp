// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "model_check.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/evalkit.hpp"
#include "scalabl/ops.hpp"
#include "scalabl/trainer.hpp"
#include "test_util.hpp"

namespace scalabl {
namespace {

namespace fs = std::filesystem;
using testing::randn;

HostConfig mlp_host(std::size_t dim, std::vector<std::size_t> hidden, int classes) {
  HostConfig h;
  h.kind = HostKind::Mlp;
  h.mlp.input_dim = dim;
  h.mlp.hidden = std::move(hidden);
  h.mlp.num_classes = classes;
  return h;
}

MethodSpec method(Variant v, Covariance c = Covariance::Diagonal) {
  MethodSpec m;
  m.variant = v;
  m.covariance = c;
  m.rank = 2;
  return m;
}

Splits vector_task(int classes = 4, double separation = 3.0, std::size_t train = 48) {
  SynthSpec s;
  s.kind = FeatureKind::Vector;
  s.dim = 5;
  s.num_classes = classes;
  s.separation = separation;
  s.train_size = train;
  s.test_size = 40;
  return synth_classification(s);
}

TrainConfig short_cfg(std::size_t steps = 20) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "scalabl_trainer_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- beta schedule --------------------------------------------------------

TEST(BetaSchedule, ConstantReturnsBetaMax) {
  TrainConfig c;
  c.beta_schedule = BetaSchedule::Constant;
  for (std::size_t s : {0u, 17u, 4999u}) EXPECT_DOUBLE_EQ(beta_at(s, c), 0.1);
}

TEST(BetaSchedule, LinearWarmup) {
  TrainConfig c;
  c.steps = 1000;
  c.warmup_fraction = 0.5;
  EXPECT_EQ(beta_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(beta_at(250, c), 0.05);
  EXPECT_DOUBLE_EQ(beta_at(500, c), 0.1);
  EXPECT_DOUBLE_EQ(beta_at(999, c), 0.1);
  c.warmup_fraction = 0.0;
  EXPECT_DOUBLE_EQ(beta_at(0, c), 0.1);
}

TEST(BetaSchedule, ParseAndValidate) {
  EXPECT_EQ(parse_beta_schedule("constant"), BetaSchedule::Constant);
  EXPECT_EQ(parse_beta_schedule("linear_warmup"), BetaSchedule::LinearWarmup);
  EXPECT_THROW(parse_beta_schedule("cosine"), ConfigError);
  TrainConfig c;
  c.beta_max = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.warmup_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- optimizer ------------------------------------------------------------

TEST(AdamW, ZeroGradientZeroDecayLeavesParameters) {
  Parameter p("w", Tensor::vector({1.5, -2.0}));
  Parameter* ps[] = {&p};
  const double decay[] = {0.0};
  AdamState st;
  for (int i = 0; i < 3; ++i) adamw_update(ps, st, 1e-3, decay);
  EXPECT_EQ(p.value, Tensor::vector({1.5, -2.0}));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  // m_hat = 1, v_hat = 1, step = lr / (1 + eps).
  Parameter p("w", Tensor::scalar(0.0));
  p.grad = Tensor::scalar(1.0);
  Parameter* ps[] = {&p};
  const double decay[] = {0.0};
  AdamState st;
  adamw_update(ps, st, 1e-3, decay);
  EXPECT_NEAR(p.value.item(), -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_LT(std::abs(p.value.item()), 1e-3);
}

TEST(AdamW, DecayOnlyStep) {
  Parameter p("w", Tensor::vector({2.0, -4.0}));
  Parameter* ps[] = {&p};
  const double decay[] = {0.01};
  AdamState st;
  adamw_update(ps, st, 0.1, decay);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(p.value[1], -4.0 * (1 - 0.1 * 0.01));
}

TEST(AdamW, ShapeMismatchRejected) {
  Parameter p("w", Tensor::vector({1.0, 2.0}));
  p.grad = Tensor::scalar(1.0);
  Parameter* ps[] = {&p};
  const double decay[] = {0.0};
  AdamState st;
  EXPECT_THROW(adamw_update(ps, st, 1e-3, decay), ShapeError);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  Parameter a("a", Tensor::vector({0, 0})), b("b", Tensor::scalar(0));
  a.grad = Tensor::vector({3, 0});
  b.grad = Tensor::scalar(4);
  Parameter* ps[] = {&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 1.0, 1e-15);
}

TEST(MapDecay, AppliedOnlyForMap) {
  const Splits data = vector_task();
  TrainConfig cfg = short_cfg(1);
  cfg.learning_rate = 0.5;
  cfg.weight_decay = 0.1;
  for (Variant v : {Variant::MLE, Variant::MAP}) {
    Model m(mlp_host(5, {6}, 4), method(v), 0);
    // No gradient reaches A through a zero B, so A changes only by decay.
    const Tensor a0 = m.adapters()[0].param("A").value;
    Trainer t(m, data.train, cfg);
    t.step_once();
    const double factor = v == Variant::MAP ? 1 - 0.5 * 0.1 : 1.0;
    EXPECT_LT(max_abs_diff(m.adapters()[0].param("A").value, factor * a0), 1e-15) << to_string(v);
  }
}

// --- ELBO -----------------------------------------------------------------

Batch small_batch(const Splits& data) { return make_batch(data.train, 0, 6); }

TEST(Elbo, ZeroBetaIsCrossEntropy) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL), 0);
  RngStream rng(1, 0);
  const Batch b = small_batch(data);
  const NoiseBundle noise = m.sample_noise(rng, b.inputs);
  const StepResult r = elbo_step(m, b, 0.0, noise);
  Tape tape;
  const double ce = ad::cross_entropy(m.forward(tape, b.inputs, noise), b.labels).value().item();
  EXPECT_EQ(r.loss, ce);
  EXPECT_EQ(r.nll, ce);
  EXPECT_GT(r.kl, 0.0);
}

TEST(Elbo, PosteriorAtPriorHasZeroKl) {
  const Splits data = vector_task();
  for (Covariance c : {Covariance::Diagonal, Covariance::FullRank}) {
    Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL, c), 0);
    for (auto& l : m.adapters()) {
      const std::size_t r = l.rank();
      // s_mu -> 0 through a very negative log, sigma = 1.
      l.param("log_s_mu").value = Tensor::full({r}, -400.0);
      l.param("log_s_sigma").value = Tensor::zeros({r});
      if (c == Covariance::FullRank) {
        l.param("E_hat").value = Tensor::eye(r);
        l.param("log_e").value = Tensor::zeros({r});
      }
    }
    RngStream rng(2, 0);
    EXPECT_NEAR(elbo_step(m, small_batch(data), 0.1, rng).kl, 0.0, 1e-15);
  }
}

TEST(Elbo, GradientsMatchFiniteDifferences) {
  const Splits data = vector_task();
  const Batch b = small_batch(data);
  for (const MethodSpec& s : {method(Variant::SCALABL), method(Variant::SCALABL, Covariance::FullRank),
                              method(Variant::BLOB), method(Variant::MLE), method(Variant::MC_DROPOUT)}) {
    Model m(mlp_host(5, {6}, 4), s, 3);
    RngStream rng(3, 0);
    for (auto& l : m.adapters()) l.param("B").value = randn(rng, l.param("B").value.shape(), 0.5);
    const NoiseBundle noise = m.sample_noise(rng, b.inputs);
    EXPECT_TRUE(testing::elbo_grad_matches(m, b, 0.1, noise)) << to_string(s.variant);
  }
}

TEST(Elbo, EmptyBatchRejected) {
  Model m(mlp_host(5, {6}, 4), method(Variant::MLE), 0);
  EXPECT_THROW(elbo_step(m, Batch{}, 0.1, NoiseBundle{}), ShapeError);
}

TEST(Training, LogDecomposesAndStaysFinite) {
  const Splits data = vector_task();
  for (Covariance c : {Covariance::Diagonal, Covariance::FullRank}) {
    Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL, c), 0);
    TrainConfig cfg = short_cfg(60);
    std::vector<LogRow> log;
    train(m, data.train, cfg, &log);
    ASSERT_EQ(log.size(), 60u);
    for (const LogRow& r : log) {
      EXPECT_NEAR(r.loss, r.nll + r.beta * r.kl, 1e-12);
      EXPECT_TRUE(std::isfinite(r.kl));
      EXPECT_EQ(r.beta, beta_at(r.step, cfg));
    }
    for (const auto& l : m.adapters()) {
      for (double v : l.param("log_s_sigma").value.data()) EXPECT_GT(std::exp(v), 0.0);
    }
  }
}

// --- training loop --------------------------------------------------------

TEST(Training, ZeroStepsReturnsInitialization) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL), 5);
  const Model fresh(mlp_host(5, {6}, 4), method(Variant::SCALABL), 5);
  TrainConfig cfg = short_cfg(0);
  const Checkpoint ck = train(m, data.train, cfg);
  EXPECT_EQ(ck.step, 0u);
  std::size_t i = 0;
  for (const auto& l : fresh.adapters())
    for (const auto& p : l.parameters()) {
      ASSERT_LT(i, ck.params.size());
      EXPECT_EQ(ck.params[i].name, p.name);
      EXPECT_EQ(ck.params[i++].value, p.value);
    }
  EXPECT_EQ(i, ck.params.size());
}

TEST(Training, SameSeedSameCheckpoint) {
  const Splits data = vector_task();
  for (Variant v : {Variant::SCALABL, Variant::ENSEMBLE, Variant::MC_DROPOUT}) {
    Model a(mlp_host(5, {6}, 4), method(v), 1), b(mlp_host(5, {6}, 4), method(v), 1);
    EXPECT_EQ(train(a, data.train, short_cfg()), train(b, data.train, short_cfg())) << to_string(v);
  }
}

TEST(Training, DifferentSeedsDiverge) {
  const Splits data = vector_task();
  Model a(mlp_host(5, {6}, 4), method(Variant::SCALABL), 1), b(mlp_host(5, {6}, 4), method(Variant::SCALABL), 1);
  TrainConfig c2 = short_cfg();
  c2.seed = 1;
  EXPECT_NE(train(a, data.train, short_cfg()).params, train(b, data.train, c2).params);
}

TEST(Training, MleFitsSeparableTwoClassData) {
  const Splits data = vector_task(2, 8.0, 200);
  Model m(mlp_host(5, {16}, 2), method(Variant::MLE), 0);
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 16;
  train(m, data.train, cfg);
  EXPECT_GT(accuracy(predict_bma(m, data.train, 1, 0)), 0.95);
}

TEST(Training, DatasetAndBaseUnchanged) {
  const Splits data = vector_task();
  const Dataset copy = data.train;
  Model m(mlp_host(5, {6}, 4), method(Variant::BLOB), 0);
  const std::uint64_t base = m.base_fingerprint();
  train(m, data.train, short_cfg());
  EXPECT_EQ(data.train, copy);
  EXPECT_EQ(m.base_fingerprint(), base);
}

TEST(Training, ClassCountMismatchRejected) {
  const Splits data = vector_task(2);
  Model m(mlp_host(5, {6}, 4), method(Variant::MLE), 0);
  EXPECT_THROW(Trainer(m, data.train, short_cfg()), ConfigError);
}

TEST(Training, EnsembleMembersUseOwnBatchOrder) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::ENSEMBLE), 0);
  train(m, data.train, short_cfg());
  EXPECT_NE(m.adapters(0)[0].param("B").value, m.adapters(1)[0].param("B").value);
}

TEST(Training, DivergenceReportsStep) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL), 0);
  for (auto& l : m.adapters()) l.param("log_s_mu").value = Tensor::full({l.rank()}, 800.0);
  try {
    train(m, data.train, short_cfg());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

// Deterministic-limit consistency: ScalaBL with sigma -> 0 and beta = 0
// against MLE whose A is diag(s_mu) A, on the same batches.
TEST(Training, DeterministicLimitMatchesMle) {
  const Splits data = vector_task();
  RngStream rng(4, 0);
  Model s(mlp_host(5, {6}, 4), method(Variant::SCALABL), 0);
  Model mle(mlp_host(5, {6}, 4), method(Variant::MLE), 0);
  for (std::size_t i = 0; i < s.adapters().size(); ++i) {
    AdapterLayer& ls = s.adapters()[i];
    AdapterLayer& lm = mle.adapters()[i];
    ls.param("B").value = randn(rng, ls.param("B").value.shape(), 0.5);
    ls.param("log_s_sigma").value = Tensor::full({ls.rank()}, -200.0);
    Tensor scaled = ls.param("A").value;
    for (std::size_t r = 0; r < scaled.rows(); ++r)
      for (std::size_t c = 0; c < scaled.cols(); ++c) scaled(r, c) *= std::exp(ls.param("log_s_mu").value[r]);
    lm.param("A").value = scaled;
    lm.param("B").value = ls.param("B").value;
  }
  TrainConfig cfg = short_cfg(30);
  cfg.beta_max = 0.0;
  cfg.learning_rate = 0.0;
  std::vector<LogRow> ls_log, lm_log;
  train(s, data.train, cfg, &ls_log);
  train(mle, data.train, cfg, &lm_log);
  ASSERT_EQ(ls_log.size(), lm_log.size());
  for (std::size_t k = 0; k < ls_log.size(); ++k) EXPECT_NEAR(ls_log[k].loss, lm_log[k].loss, 1e-8) << k;
}

// --- checkpoints ----------------------------------------------------------

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::SCALABL, Covariance::FullRank), 0);
  Trainer t(m, data.train, short_cfg());
  t.run(7);
  const Checkpoint ck = t.checkpoint();
  const fs::path p1 = temp_path("rt1.bin"), p2 = temp_path("rt2.bin");
  save_checkpoint(ck, p1.string());
  const Checkpoint loaded = load_checkpoint(p1.string());
  EXPECT_EQ(loaded, ck);
  save_checkpoint(loaded, p2.string());
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
  EXPECT_FALSE(fs::exists(p1.string() + ".tmp"));
}

TEST(Checkpoint, ResumeEqualsUninterruptedRun) {
  const Splits data = vector_task();
  for (Variant v : {Variant::SCALABL, Variant::ENSEMBLE, Variant::MAP}) {
    Model full(mlp_host(5, {6}, 4), method(v), 0);
    const Checkpoint reference = train(full, data.train, short_cfg(25));

    Model first(mlp_host(5, {6}, 4), method(v), 0);
    Trainer t1(first, data.train, short_cfg(25));
    t1.run(11);
    const fs::path p = temp_path("resume.bin");
    save_checkpoint(t1.checkpoint(), p.string());

    Model second(mlp_host(5, {6}, 4), method(v), 0);
    Trainer t2(second, data.train, short_cfg(25));
    t2.restore(load_checkpoint(p.string()));
    t2.run();
    EXPECT_EQ(t2.checkpoint(), reference) << to_string(v);
  }
}

TEST(Checkpoint, BlobIntoScalaBLRejected) {
  const Splits data = vector_task();
  Model blob(mlp_host(5, {6}, 4), method(Variant::BLOB), 0);
  const Checkpoint ck = train(blob, data.train, short_cfg(2));
  Model target(mlp_host(5, {6}, 4), method(Variant::SCALABL), 0);
  try {
    apply_checkpoint(target, ck);
    FAIL();
  } catch (const IncompatibleCheckpoint& e) {
    EXPECT_NE(std::string(e.what()).find("blob"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RestoreRejectsDifferentConfig) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::MLE), 0);
  Trainer t(m, data.train, short_cfg());
  const Checkpoint ck = t.checkpoint();
  TrainConfig other = short_cfg();
  other.learning_rate = 0.5;
  Trainer t2(m, data.train, other);
  EXPECT_THROW(t2.restore(ck), IncompatibleCheckpoint);
}

TEST(Checkpoint, CorruptAndVersionMismatchRejected) {
  const Splits data = vector_task();
  Model m(mlp_host(5, {6}, 4), method(Variant::MLE), 0);
  const fs::path p = temp_path("corrupt.bin");
  save_checkpoint(train(m, data.train, short_cfg(1)), p.string());
  const std::string bytes = file_bytes(p);

  const auto write = [&](const std::string& b) {
    std::ofstream(p, std::ios::binary) << b;
  };
  write(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(p.string()), FormatError);
  write("NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(p.string()), FormatError);

  std::string bumped = bytes;
  const auto at = bumped.find("\"version\":1");
  ASSERT_NE(at, std::string::npos);
  bumped[at + 10] = '9';
  write(bumped);
  try {
    load_checkpoint(p.string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint(temp_path("missing.bin").string()), FormatError);
}

TEST(TrainLog, CsvHeaderAndRows) {
  const fs::path p = temp_path("log.csv");
  const LogRow rows[] = {{0, 1.5, 1.25, 2.5, 0.1}};
  write_log_csv(rows, p.string());
  EXPECT_EQ(file_bytes(p), "step,loss,nll,kl,beta\n0,1.5,1.25,2.5,0.10000000000000001\n");
}

}  // namespace
}  // namespace scalabl
