// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>

#include "scalabl/config.hpp"
#include "scalabl/errors.hpp"

namespace scalabl {
namespace {

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1e-3), "0.001");
  EXPECT_EQ(format_double(2.0), "2");
  const double tricky = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(tricky)), tricky);
}

TEST(ParseConfig, SectionsKeysAndComments) {
  const RunConfig c = parse_config(
      "# desk run\n"
      "[method]\n"
      "variant = blob\n"
      "rank = 8   # inline\n"
      "\n"
      "[train]\n"
      "steps = 100\n"
      "learning_rate = 0.003\n"
      "beta_schedule = constant\n"
      "[data]\n"
      "kind = vector\n"
      "delta = 1.5\n"
      "[eval]\n"
      "seeds = 4,5\n"
      "[output]\n"
      "dir = /tmp/x\n");
  EXPECT_EQ(c.method.variant, Variant::BLOB);
  EXPECT_EQ(c.method.rank, 8u);
  EXPECT_EQ(c.train.steps, 100u);
  EXPECT_EQ(c.train.learning_rate, 0.003);
  EXPECT_EQ(c.train.beta_schedule, BetaSchedule::Constant);
  EXPECT_EQ(c.data.synth.kind, FeatureKind::Vector);
  EXPECT_EQ(c.data.synth.delta, 1.5);
  EXPECT_EQ(c.eval.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.out_dir, "/tmp/x");
}

TEST(ParseConfig, DefaultsMatchDocumentedValues) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.train.steps, 5000u);
  EXPECT_EQ(c.train.beta_max, 0.1);
  EXPECT_EQ(c.train.eval_samples, 10u);
  EXPECT_EQ(c.train.weight_decay, 1e-2);
  EXPECT_EQ(c.method.ensemble_size, 3u);
  EXPECT_EQ(c.sweep.ranks, (std::vector<std::size_t>{4, 8, 16, 32}));
}

TEST(ParseConfig, ErrorsNameTheLine) {
  const auto message = [](const std::string& text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("[train]\nsteps = many\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("[nope]\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("[train]\nsteps\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("[train]\nbogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(message("[method]\nvariant = laplace\n").find("scalabl"), std::string::npos);
}

TEST(RenderConfig, RoundTripsEveryField) {
  RunConfig c;
  c.method.variant = Variant::SCALABL;
  c.method.covariance = Covariance::FullRank;
  c.method.rho = 0.03;
  c.train.learning_rate = 0.1 + 0.2;
  c.train.seed = 42;
  c.model.kind = HostKind::Mlp;
  c.model.mlp.hidden = {3, 9, 4};
  c.data.synth.delta = 2.25;
  c.eval.split = "ood";
  c.sweep.samples = {1, 3};
  c.out_dir = "runs/x";
  EXPECT_EQ(parse_config(render_config(c)), c);
  EXPECT_EQ(render_config(parse_config(render_config(c))), render_config(c));
}

TEST(Override, QualifiedAndBareKeys) {
  RunConfig c;
  apply_override(c, "train.steps", "12");
  EXPECT_EQ(c.train.steps, 12u);
  apply_override(c, "learning_rate", "0.5");
  EXPECT_EQ(c.train.learning_rate, 0.5);
  apply_override(c, "transformer.embed_dim", "16");
  EXPECT_EQ(c.model.transformer.embed_dim, 16u);
  EXPECT_THROW(apply_override(c, "nonexistent", "1"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.steps", "-3"), ConfigError);
}

TEST(Override, AmbiguousBareKeyRejected) {
  RunConfig c;
  // kind lives in both the data and model sections.
  EXPECT_THROW(apply_override(c, "kind", "vector"), ConfigError);
  apply_override(c, "data.kind", "vector");
  EXPECT_EQ(c.data.synth.kind, FeatureKind::Vector);
}

TEST(ResolveHost, TakesShapeFromData) {
  SynthSpec s;
  s.kind = FeatureKind::Vector;
  s.dim = 7;
  s.num_classes = 2;
  s.train_size = 10;
  s.test_size = 10;
  const Dataset train = synth_classification(s).train;
  HostConfig h;
  EXPECT_THROW(resolve_host(h, train), ConfigError);
  h.kind = HostKind::Mlp;
  const HostConfig r = resolve_host(h, train);
  EXPECT_EQ(r.mlp.input_dim, 7u);
  EXPECT_EQ(r.num_classes(), 2);
}

TEST(ResolveHost, GrowsVocabularyAndSequenceLength) {
  SynthSpec s;
  s.vocab_size = 300;
  s.seq_len = 40;
  s.train_size = 10;
  s.test_size = 10;
  const HostConfig r = resolve_host(HostConfig{}, synth_classification(s).train);
  EXPECT_GE(r.transformer.vocab_size, 300u);
  EXPECT_GE(r.transformer.max_seq_len, 40u);
}

}  // namespace
}  // namespace scalabl
