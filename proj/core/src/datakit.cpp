// SPDX-License-Identifier: Apache-2.0
#include "scalabl/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "scalabl/errors.hpp"
#include "scalabl/rng.hpp"

namespace scalabl {

using nlohmann::json;

std::string to_string(FeatureKind k) { return k == FeatureKind::Tokens ? "tokens" : "vector"; }

FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "tokens" || s == "token") return FeatureKind::Tokens;
  if (s == "vector" || s == "dense") return FeatureKind::Vector;
  throw ConfigError("unknown feature kind '" + s + "'; valid: tokens, vector");
}

std::size_t Example::feature_len() const {
  return is_tokens() ? tokens().size() : vector().size();
}

FeatureKind Dataset::kind() const {
  if (examples.empty()) return FeatureKind::Vector;
  return examples.front().is_tokens() ? FeatureKind::Tokens : FeatureKind::Vector;
}

std::size_t Dataset::feature_len() const {
  return examples.empty() ? 0 : examples.front().feature_len();
}

int Dataset::num_classes() const { return examples.empty() ? 0 : examples.front().choices; }

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

namespace {

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t feature_hash(const Example& e) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  if (e.is_tokens()) {
    h = fnv_bytes(h, e.tokens().data(), e.tokens().size() * sizeof(int));
  } else {
    h = fnv_bytes(h, e.vector().data(), e.vector().size() * sizeof(double));
  }
  return h;
}

}  // namespace

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& e : examples) {
    const std::uint64_t fh = feature_hash(e);
    h = fnv_bytes(h, &fh, sizeof fh);
    h = fnv_bytes(h, &e.choices, sizeof e.choices);
    h = fnv_bytes(h, &e.label, sizeof e.label);
  }
  return h;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) fail("expected a JSON object");
    if (!obj.contains("features") || !obj["features"].is_array()) fail("missing array 'features'");
    if (!obj.contains("choices") || !obj["choices"].is_number_integer()) fail("missing integer 'choices'");
    if (!obj.contains("label") || !obj["label"].is_number_integer()) fail("missing integer 'label'");
    Example ex;
    ex.choices = obj["choices"].get<int>();
    ex.label = obj["label"].get<int>();
    if (ex.choices < 1) fail("choices must be positive");
    if (ex.label < 0 || ex.label >= ex.choices) {
      fail("label " + std::to_string(ex.label) + " not in [0, " + std::to_string(ex.choices) + ")");
    }
    const auto& feats = obj["features"];
    const bool any_float = std::any_of(feats.begin(), feats.end(),
                                       [](const json& v) { return v.is_number_float(); });
    if (!std::all_of(feats.begin(), feats.end(), [](const json& v) { return v.is_number(); })) {
      fail("features must be numbers");
    }
    if (any_float) {
      std::vector<double> v;
      for (const auto& f : feats) v.push_back(f.get<double>());
      if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
        fail("non-finite feature value");
      }
      ex.features = std::move(v);
    } else {
      std::vector<int> t;
      for (const auto& f : feats) {
        const auto id = f.get<long long>();
        if (id < 0 || id > std::numeric_limits<int>::max()) fail("token id out of range");
        t.push_back(static_cast<int>(id));
      }
      ex.features = std::move(t);
    }
    if (!ds.examples.empty()) {
      const Example& first = ds.examples.front();
      if (first.is_tokens() != ex.is_tokens()) fail("feature kind differs from line 1 (ragged feature kinds)");
      if (first.feature_len() != ex.feature_len()) fail("feature length differs from earlier lines");
      if (first.choices != ex.choices) fail("choices differs from earlier lines");
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write dataset file " + path.string());
  for (const auto& e : ds.examples) {
    json obj;
    if (e.is_tokens()) obj["features"] = e.tokens();
    else obj["features"] = e.vector();
    obj["choices"] = e.choices;
    obj["label"] = e.label;
    out << obj.dump() << '\n';
  }
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (!(delta >= 0.0)) throw ConfigError("shift delta must be >= 0");
  if (train_size == 0 || test_size == 0) throw ConfigError("split sizes must be positive");
  if (kind == FeatureKind::Vector) {
    if (dim < static_cast<std::size_t>(num_classes)) {
      throw ConfigError("vector dim must be at least the number of classes");
    }
    if (!(separation > 0.0)) throw ConfigError("separation must be positive");
  } else {
    if (seq_len == 0) throw ConfigError("seq_len must be positive");
    if (keywords_per_class == 0 ||
        keywords_per_class * static_cast<std::size_t>(num_classes) + 1 >= vocab_size) {
      throw ConfigError("vocab too small for the keyword sets");
    }
    if (signal_prob < 0 || confuse_prob < 0 || signal_prob + confuse_prob > 1.0) {
      throw ConfigError("signal_prob + confuse_prob must lie in [0, 1]");
    }
    if (label_noise < 0 || label_noise >= 1) throw ConfigError("label_noise must lie in [0, 1)");
  }
}

namespace {

struct VectorTask {
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> shift_dirs;
};

std::vector<double> random_unit(RngStream& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

VectorTask make_vector_task(const SynthSpec& s) {
  RngStream rng(s.task_seed, stream_id_for("synth/vector-task"));
  VectorTask task;
  // Orthonormal directions scaled so every pair of means is `separation` apart.
  const double radius = s.separation / std::sqrt(2.0);
  std::vector<std::vector<double>> basis;
  for (int c = 0; c < s.num_classes; ++c) {
    std::vector<double> v = random_unit(rng, s.dim);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < s.dim; ++i) dot += v[i] * b[i];
        for (std::size_t i = 0; i < s.dim; ++i) v[i] -= dot * b[i];
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    basis.push_back(v);
    std::vector<double> mean(s.dim);
    for (std::size_t i = 0; i < s.dim; ++i) mean[i] = radius * v[i];
    task.means.push_back(std::move(mean));
  }
  // Each class drifts toward the next one, so the shift erodes the margin.
  for (int c = 0; c < s.num_classes; ++c) {
    const auto& from = task.means[static_cast<std::size_t>(c)];
    const auto& to = task.means[static_cast<std::size_t>((c + 1) % s.num_classes)];
    std::vector<double> dir(s.dim);
    for (std::size_t i = 0; i < s.dim; ++i) dir[i] = (to[i] - from[i]) / s.separation;
    task.shift_dirs.push_back(std::move(dir));
  }
  return task;
}

struct TokenTask {
  std::vector<std::vector<int>> keywords;  // per class
  std::vector<int> filler;
};

TokenTask make_token_task(const SynthSpec& s) {
  RngStream rng(s.task_seed, stream_id_for("synth/token-task"));
  std::vector<int> ids(s.vocab_size - 1);
  std::iota(ids.begin(), ids.end(), 1);  // id 0 is reserved
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  TokenTask task;
  std::size_t off = 0;
  for (int c = 0; c < s.num_classes; ++c) {
    task.keywords.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(off),
                               ids.begin() + static_cast<std::ptrdiff_t>(off + s.keywords_per_class));
    off += s.keywords_per_class;
  }
  task.filler.assign(ids.begin() + static_cast<std::ptrdiff_t>(off), ids.end());
  return task;
}

Example sample_vector(const SynthSpec& s, const VectorTask& task, RngStream& rng, double shift) {
  const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_classes)));
  std::vector<double> x(s.dim);
  for (std::size_t i = 0; i < s.dim; ++i) {
    x[i] = task.means[static_cast<std::size_t>(label)][i] +
           shift * task.shift_dirs[static_cast<std::size_t>(label)][i] + rng.normal();
  }
  return Example{std::move(x), s.num_classes, label};
}

Example sample_tokens(const SynthSpec& s, const TokenTask& task, RngStream& rng, double shift) {
  const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_classes)));
  // The shift erodes class evidence: a fraction delta / (1 + delta) of the
  // true-class keyword slots turns into filler.
  const double erode = shift / (1.0 + shift);
  const double p_signal = s.signal_prob * (1.0 - erode);
  std::vector<int> seq(s.seq_len);
  for (auto& tok : seq) {
    const double u = rng.uniform();
    if (u < p_signal) {
      const auto& kw = task.keywords[static_cast<std::size_t>(label)];
      tok = kw[rng.below(kw.size())];
    } else if (u < p_signal + s.confuse_prob) {
      auto other = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(s.num_classes - 1)));
      if (other >= static_cast<std::size_t>(label)) ++other;
      tok = task.keywords[other][rng.below(task.keywords[other].size())];
    } else {
      tok = task.filler[rng.below(task.filler.size())];
    }
  }
  int observed = label;
  if (rng.uniform() < s.label_noise) {
    observed = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_classes)));
  }
  return Example{std::move(seq), s.num_classes, observed};
}

}  // namespace

Splits synth_classification(const SynthSpec& spec) {
  spec.validate();
  Splits out;
  const RngStream root(spec.seed, stream_id_for("synth/samples"));
  std::unordered_set<std::uint64_t> seen;

  auto generate = [&](Dataset& ds, std::size_t count, std::uint64_t split_id, double shift,
                      bool exclude_train) {
    RngStream rng = root.split(split_id);
    if (spec.kind == FeatureKind::Vector) {
      const VectorTask task = make_vector_task(spec);
      while (ds.size() < count) {
        Example ex = sample_vector(spec, task, rng, shift);
        if (exclude_train && seen.contains(feature_hash(ex))) continue;
        ds.examples.push_back(std::move(ex));
      }
    } else {
      const TokenTask task = make_token_task(spec);
      while (ds.size() < count) {
        Example ex = sample_tokens(spec, task, rng, shift);
        if (exclude_train && seen.contains(feature_hash(ex))) continue;
        ds.examples.push_back(std::move(ex));
      }
    }
  };

  generate(out.train, spec.train_size, 0, 0.0, false);
  for (const auto& e : out.train.examples) seen.insert(feature_hash(e));
  generate(out.test_id, spec.test_size, 1, 0.0, true);
  generate(out.test_ood, spec.test_size, 2, spec.delta, true);
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng = RngStream(seed, stream_id_for("batches")).split(epoch);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(perm.size(), start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.inputs.kind = ds.kind();
  b.inputs.count = indices.size();
  const std::size_t len = ds.feature_len();
  b.labels.reserve(indices.size());
  if (b.inputs.kind == FeatureKind::Tokens) {
    b.inputs.seq_len = len;
    b.inputs.tokens.reserve(indices.size() * len);
    for (std::size_t i : indices) {
      const auto& t = ds.examples.at(i).tokens();
      b.inputs.tokens.insert(b.inputs.tokens.end(), t.begin(), t.end());
    }
  } else {
    b.inputs.dense = Tensor({indices.size(), len});
    std::size_t row = 0;
    for (std::size_t i : indices) {
      const auto& v = ds.examples.at(i).vector();
      std::copy(v.begin(), v.end(), b.inputs.dense.data().begin() + static_cast<std::ptrdiff_t>(row * len));
      ++row;
    }
  }
  for (std::size_t i : indices) b.labels.push_back(ds.examples.at(i).label);
  return b;
}

Batch make_batch(const Dataset& ds, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(ds, idx);
}

Batch full_batch(const Dataset& ds) { return make_batch(ds, 0, ds.size()); }

}  // namespace scalabl
