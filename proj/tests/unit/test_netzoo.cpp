// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "scalabl/errors.hpp"
#include "scalabl/evalkit.hpp"
#include "scalabl/netzoo.hpp"
#include "scalabl/ops.hpp"
#include "scalabl/trainer.hpp"
#include "test_util.hpp"

namespace scalabl {
namespace {

using testing::randn;

HostConfig small_transformer(int classes = 4) {
  HostConfig h;
  h.kind = HostKind::Transformer;
  h.transformer.vocab_size = 16;
  h.transformer.embed_dim = 8;
  h.transformer.num_layers = 2;
  h.transformer.num_heads = 2;
  h.transformer.max_seq_len = 6;
  h.transformer.ffn_dim = 12;
  h.transformer.num_classes = classes;
  return h;
}

HostConfig small_mlp(int classes = 4) {
  HostConfig h;
  h.kind = HostKind::Mlp;
  h.mlp.input_dim = 5;
  h.mlp.hidden = {7, 6};
  h.mlp.num_classes = classes;
  return h;
}

Inputs token_inputs(RngStream& rng, std::size_t count, std::size_t seq_len, std::size_t vocab) {
  Inputs in;
  in.kind = FeatureKind::Tokens;
  in.count = count;
  in.seq_len = seq_len;
  for (std::size_t i = 0; i < count * seq_len; ++i) in.tokens.push_back(static_cast<int>(rng.below(vocab)));
  return in;
}

Inputs vector_inputs(RngStream& rng, std::size_t count, std::size_t dim) {
  Inputs in;
  in.kind = FeatureKind::Vector;
  in.count = count;
  in.dense = randn(rng, {count, dim});
  return in;
}

Inputs inputs_for(const HostConfig& h, RngStream& rng, std::size_t count) {
  return h.kind == HostKind::Mlp ? vector_inputs(rng, count, h.mlp.input_dim)
                                 : token_inputs(rng, count, 5, h.transformer.vocab_size);
}

MethodSpec method(Variant v, Covariance c = Covariance::Diagonal) {
  MethodSpec m;
  m.variant = v;
  m.covariance = c;
  m.rank = 2;
  return m;
}

std::vector<MethodSpec> all_methods() {
  return {method(Variant::MLE),     method(Variant::MAP),
          method(Variant::MC_DROPOUT), method(Variant::ENSEMBLE),
          method(Variant::BLOB),    method(Variant::SCALABL),
          method(Variant::SCALABL, Covariance::FullRank)};
}

TEST(Config, TransformerInvariants) {
  TinyTransformerConfig c;
  EXPECT_EQ(c.adapted_layer_count(), 5u);
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, AdaptedLayerPlacement) {
  const Model m(small_transformer(), method(Variant::SCALABL), 0);
  ASSERT_EQ(m.adapters().size(), 5u);
  EXPECT_EQ(m.adapters()[0].name(), "block0.query");
  EXPECT_EQ(m.adapters()[1].name(), "block0.value");
  EXPECT_EQ(m.adapters()[4].name(), "head");
  const Model mlp(small_mlp(), method(Variant::SCALABL), 0);
  EXPECT_EQ(mlp.adapters().size(), 3u);
}

TEST(Model, MleForwardIsDeterministic) {
  RngStream rng(1, 0);
  Model m(small_transformer(), method(Variant::MLE), 0);
  for (auto& l : m.adapters()) l.param("B").value = randn(rng, l.param("B").value.shape());
  const Inputs in = token_inputs(rng, 3, 5, 16);
  EXPECT_EQ(m.logits(in, {}), m.logits(in, {}));
}

TEST(Model, ZeroDeltaAtInitForEveryVariant) {
  for (const HostConfig& h : {small_transformer(), small_mlp()}) {
    for (const MethodSpec& s : all_methods()) {
      RngStream rng(2, 0);
      Model m(h, s, 7);
      const Inputs in = inputs_for(h, rng, 3);
      Tape tape;
      const Tensor base = m.forward_base(tape, in).value();
      const NoiseBundle noise = m.sample_noise(rng, in);
      EXPECT_LT(max_abs_diff(m.logits(in, noise), base), 1e-12) << to_string(s.variant);
    }
  }
}

TEST(Model, ParameterAudit) {
  for (const HostConfig& h : {small_transformer(), small_mlp()}) {
    for (const MethodSpec& s : all_methods()) {
      Model m(h, s, 0);
      const auto dims = m.adapted_layer_dims();
      std::size_t walked = 0;
      for (Parameter* p : m.trainable_parameters()) walked += p->value.size();
      EXPECT_EQ(walked, count_lora_params(s.rank, dims) + count_additional_params(s, dims))
          << to_string(s.variant);
      EXPECT_EQ(m.trainable_count(), walked);
    }
  }
}

TEST(Model, DefaultTransformerCounts) {
  MethodSpec s;
  Model m(HostConfig{}, s, 0);
  std::size_t base = 0;
  for (const auto& p : m.base_parameters()) base += p.value.size();
  EXPECT_EQ(m.trainable_count(), 1208u);
  EXPECT_EQ(count_additional_params(s, m.adapted_layer_dims()), 40u);
  EXPECT_EQ(base, 21632u);
}

TEST(Model, LogitsShape) {
  for (const HostConfig& h : {small_transformer(), small_mlp()}) {
    RngStream rng(3, 0);
    Model m(h, method(Variant::SCALABL), 0);
    const Inputs in = inputs_for(h, rng, 3);
    const Tensor y = m.logits(in, m.sample_noise(rng, in));
    EXPECT_EQ(y.shape(), (Shape{3, 4}));
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(Model, SameNoiseGivesSameLogits) {
  RngStream rng(4, 0);
  Model m(small_transformer(), method(Variant::BLOB), 0);
  for (auto& l : m.adapters()) l.param("B").value = randn(rng, l.param("B").value.shape());
  const Inputs in = token_inputs(rng, 3, 5, 16);
  const NoiseBundle noise = m.sample_noise(rng, in);
  EXPECT_EQ(m.logits(in, noise), m.logits(in, noise));
  EXPECT_NE(m.logits(in, noise), m.logits(in, m.sample_noise(rng, in)));
}

TEST(Model, VanishingSigmaMatchesMeanForward) {
  RngStream rng(5, 0);
  Model m(small_transformer(), method(Variant::SCALABL), 0);
  for (auto& l : m.adapters()) {
    l.param("B").value = randn(rng, l.param("B").value.shape());
    l.param("log_s_sigma").value = Tensor::full(l.param("log_s_sigma").value.shape(), -60.0);
  }
  const Inputs in = token_inputs(rng, 3, 5, 16);
  Tape tape;
  const Tensor mean = m.forward_mean(tape, in).value();
  EXPECT_LT(max_abs_diff(m.logits(in, m.sample_noise(rng, in)), mean), 1e-12);
}

TEST(Model, MissingNoiseRejectedForStochasticVariants) {
  RngStream rng(6, 0);
  for (Variant v : {Variant::SCALABL, Variant::BLOB, Variant::MC_DROPOUT}) {
    Model m(small_mlp(), method(v), 0);
    const Inputs in = vector_inputs(rng, 2, 5);
    EXPECT_THROW(m.logits(in, {}), ShapeError);
  }
}

TEST(Model, SoftmaxRowsSumToOne) {
  RngStream rng(7, 0);
  Model m(small_transformer(), method(Variant::MLE), 0);
  const Tensor p = softmax_rows(m.logits(token_inputs(rng, 6, 5, 16), {}));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < p.cols(); ++c) s += p(i, c);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

TEST(Model, GradientFlowsToEveryAdapterParameter) {
  for (const HostConfig& h : {small_transformer(), small_mlp()}) {
    for (const MethodSpec& s : all_methods()) {
      RngStream rng(8, 0);
      Model m(h, s, 0);
      // Move B off zero so A and the scale parameters see a signal.
      for (std::size_t k = 0; k < m.num_members(); ++k)
        for (auto& l : m.adapters(k)) l.param("B").value = randn(rng, l.param("B").value.shape(), 0.5);
      Batch batch;
      batch.inputs = inputs_for(h, rng, 4);
      batch.labels = {0, 1, 2, 3};
      for (std::size_t k = 0; k < m.num_members(); ++k) {
        elbo_step(m, batch, 0.1, rng, k);
        for (auto& l : m.adapters(k)) {
          for (const Parameter& p : l.parameters()) {
            // Full-rank sampling draws through the Cholesky factor, leaving
            // the diagonal scale unused.
            if (s.covariance == Covariance::FullRank && p.name.ends_with("log_s_sigma")) continue;
            EXPECT_GT(frobenius_norm(p.grad), 0.0) << to_string(s.variant) << " " << p.name;
          }
        }
      }
    }
  }
}

TEST(Model, BaseNeverReceivesGradient) {
  RngStream rng(9, 0);
  Model m(small_transformer(), method(Variant::SCALABL), 0);
  Batch batch{token_inputs(rng, 4, 5, 16), {0, 1, 2, 3}};
  elbo_step(m, batch, 0.1, rng);
  for (const auto& p : m.base_parameters()) {
    EXPECT_FALSE(p.trainable);
    EXPECT_EQ(p.grad, Tensor::zeros(p.value.shape())) << p.name;
  }
}

TEST(Model, FrozenBaseHashUnchangedByTraining) {
  Model m(small_mlp(), method(Variant::SCALABL), 0);
  SynthSpec spec;
  spec.kind = FeatureKind::Vector;
  spec.dim = 5;
  spec.train_size = 40;
  spec.test_size = 10;
  const Splits data = synth_classification(spec);
  const std::uint64_t before = m.base_fingerprint();
  TrainConfig cfg;
  cfg.steps = 30;
  train(m, data.train, cfg);
  EXPECT_EQ(m.base_fingerprint(), before);
}

TEST(Model, EnsembleMembersDiffer) {
  Model m(small_mlp(), method(Variant::ENSEMBLE), 0);
  ASSERT_EQ(m.num_members(), 3u);
  EXPECT_NE(m.adapters(0)[0].param("A").value, m.adapters(1)[0].param("A").value);
  EXPECT_EQ(m.adapters(1)[0].name(), "member1.hidden0");
}

TEST(Model, BaseIndependentOfAdapterSeedAndMethod) {
  const Model a(small_transformer(), method(Variant::MLE), 0);
  const Model b(small_transformer(), method(Variant::BLOB), 99);
  EXPECT_EQ(a.base_fingerprint(), b.base_fingerprint());
  HostConfig other = small_transformer();
  other.base_seed += 1;
  EXPECT_NE(Model(other, method(Variant::MLE), 0).base_fingerprint(), a.base_fingerprint());
}

}  // namespace
}  // namespace scalabl
