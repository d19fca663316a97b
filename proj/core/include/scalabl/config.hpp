// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "scalabl/adapters.hpp"
#include "scalabl/datakit.hpp"
#include "scalabl/netzoo.hpp"
#include "scalabl/trainer.hpp"

namespace scalabl {

/// Ordered key/value pairs of one config section.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

enum class DataSource { Synthetic, File };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  SynthSpec synth;
  // File source: pre-featurized JSONL splits.
  std::string train_path;
  std::string test_path;
  std::string ood_path;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string split = "id";  // id | ood
  std::size_t chunk_size = 512;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct SweepConfig {
  std::vector<std::size_t> samples = {1, 2, 4, 8, 10, 16, 32, 64};
  std::vector<std::size_t> ranks = {4, 8, 16, 32};
  std::size_t repeats = 5;

  bool operator==(const SweepConfig&) const = default;
};

struct RunConfig {
  MethodSpec method;
  TrainConfig train;
  HostConfig model;
  DataConfig data;
  EvalConfig eval;
  SweepConfig sweep;
  std::string out_dir;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

KeyValues to_kv(const MethodSpec& m);
KeyValues to_kv(const TrainConfig& t);
KeyValues to_kv(const HostConfig& h);
KeyValues to_kv(const DataConfig& d);
KeyValues to_kv(const EvalConfig& e);
KeyValues to_kv(const SweepConfig& s);

/// Each setter throws ConfigError for an unknown key or unparsable value.
void set_kv(MethodSpec& m, const std::string& key, const std::string& value);
void set_kv(TrainConfig& t, const std::string& key, const std::string& value);
void set_kv(HostConfig& h, const std::string& key, const std::string& value);
void set_kv(DataConfig& d, const std::string& key, const std::string& value);
void set_kv(EvalConfig& e, const std::string& key, const std::string& value);
void set_kv(SweepConfig& s, const std::string& key, const std::string& value);

template <class T>
T from_kv(const KeyValues& kv) {
  T out{};
  for (const auto& [k, v] : kv) set_kv(out, k, v);
  return out;
}

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
/// Sections: method, train, model, data, eval, sweep, output.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies `section.key=value`; a bare key is accepted when exactly one
/// section defines it.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Canonical text of every field; parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& cfg);

/// Host config with class count, vocabulary, sequence length and input
/// width taken from the training data.
HostConfig resolve_host(const HostConfig& model, const Dataset& train);

}  // namespace scalabl
