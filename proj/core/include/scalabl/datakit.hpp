// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "scalabl/tensor.hpp"

namespace scalabl {

enum class FeatureKind { Tokens, Vector };

std::string to_string(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);

/// One classification example; features are token ids or a dense vector.
struct Example {
  std::variant<std::vector<int>, std::vector<double>> features;
  int choices = 0;
  int label = 0;

  bool is_tokens() const { return std::holds_alternative<std::vector<int>>(features); }
  const std::vector<int>& tokens() const { return std::get<std::vector<int>>(features); }
  const std::vector<double>& vector() const { return std::get<std::vector<double>>(features); }
  std::size_t feature_len() const;

  bool operator==(const Example&) const = default;
};

/// Immutable collection of examples sharing a feature kind, length and class count.
struct Dataset {
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  FeatureKind kind() const;
  std::size_t feature_len() const;
  int num_classes() const;
  std::vector<int> labels() const;
  /// Stable 64-bit digest of the contents.
  std::uint64_t fingerprint() const;

  bool operator==(const Dataset&) const = default;
};

/// Reads one JSON object per line: {"features": [...], "choices": C, "label": y}.
/// Integer features are token ids, any float makes the line a dense vector.
/// Errors carry the 1-based line number.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& ds, const std::filesystem::path& path);

struct SynthSpec {
  FeatureKind kind = FeatureKind::Tokens;
  int num_classes = 4;
  std::size_t train_size = 640;
  std::size_t test_size = 1270;
  double delta = 0.0;          // OOD shift, >= 0
  std::uint64_t seed = 0;      // drives sampling
  std::uint64_t task_seed = 0; // drives the class structure (keywords, means)

  // Vector mode: Gaussian mixture with unit noise.
  std::size_t dim = 16;
  double separation = 3.0;     // distance between class means, in noise std units

  // Token mode: class keyword sets mixed with filler tokens.
  std::size_t vocab_size = 128;
  std::size_t seq_len = 16;
  std::size_t keywords_per_class = 6;
  double signal_prob = 0.12;   // chance a position holds a true-class keyword
  double confuse_prob = 0.06;  // chance a position holds another class's keyword
  double label_noise = 0.1;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

struct Splits {
  Dataset train;
  Dataset test_id;
  Dataset test_ood;
};

/// Train / in-distribution test / shifted test. With delta = 0 the OOD split
/// is drawn from the same distribution as test_id. Test splits never repeat
/// a training example.
Splits synth_classification(const SynthSpec& spec);

/// Index batches for one epoch under a seeded permutation; the last partial
/// batch is kept.
std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

/// Model-ready features for a set of examples.
struct Inputs {
  FeatureKind kind = FeatureKind::Vector;
  std::vector<int> tokens;   // count * seq_len, row-major
  std::size_t seq_len = 0;
  Tensor dense;              // count x dim
  std::size_t count = 0;
};

struct Batch {
  Inputs inputs;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& ds, std::size_t begin, std::size_t end);
Batch full_batch(const Dataset& ds);

}  // namespace scalabl
