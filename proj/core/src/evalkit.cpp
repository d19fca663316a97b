// SPDX-License-Identifier: Apache-2.0
#include "scalabl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/rng.hpp"

namespace scalabl {
namespace {

void check_labels(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.rows() != labels.size()) {
    throw ShapeError("probabilities " + shape_str(probs.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto c = static_cast<int>(probs.cols());
  for (int y : labels) {
    if (y < 0 || y >= c) throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
  }
}

std::size_t argmax_row(const Tensor& probs, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.cols(); ++c)
    if (probs(r, c) > probs(r, best)) best = c;
  return best;
}

// Rows of `noise` belonging to examples [begin, end) out of `count`.
NoiseBundle slice_noise(const NoiseBundle& noise, std::size_t count, std::size_t begin, std::size_t end) {
  NoiseBundle out;
  out.reserve(noise.size());
  for (const Tensor& t : noise) {
    if (t.rank() != 2 || t.rows() % count != 0 || t.rows() < count) {
      out.push_back(t);
      continue;
    }
    const std::size_t per = t.rows() / count;
    const std::size_t cols = t.cols();
    Tensor s = Tensor::zeros({(end - begin) * per, cols});
    std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * per * cols),
              t.data().begin() + static_cast<std::ptrdiff_t>(end * per * cols), s.data().begin());
    out.push_back(std::move(s));
  }
  return out;
}

// Softmax probabilities of one pass over the whole dataset.
Tensor pass_probs(Model& model, const Dataset& data, const NoiseBundle* noise, std::size_t member,
                  std::size_t chunk) {
  const std::size_t n = data.size();
  const auto c = static_cast<std::size_t>(model.num_classes());
  Tensor probs = Tensor::zeros({n, c});
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Batch b = make_batch(data, begin, end);
    Tensor logits;
    if (noise == nullptr) {
      logits = model.logits(b.inputs, {}, member);
    } else {
      logits = model.logits(b.inputs, slice_noise(*noise, n, begin, end), member);
    }
    const Tensor p = softmax_rows(logits);
    std::copy(p.data().begin(), p.data().end(),
              probs.data().begin() + static_cast<std::ptrdiff_t>(begin * c));
  }
  return probs;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = Tensor::zeros({logits.rows(), logits.cols()});
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

PredictiveDistribution predict_bma(Model& model, const Dataset& data, std::size_t n_samples,
                                   std::uint64_t seed, std::size_t chunk_size) {
  if (n_samples < 1) throw ConfigError("predict_bma: number of samples must be at least 1");
  if (chunk_size == 0) throw ConfigError("predict_bma: chunk size must be positive");
  if (data.num_classes() > model.num_classes()) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes()) + " classes, model head has " +
                      std::to_string(model.num_classes()));
  }
  PredictiveDistribution pd;
  pd.labels = data.labels();
  pd.method = model.spec();
  const std::size_t c = static_cast<std::size_t>(model.num_classes());
  if (data.empty()) {
    pd.probs = Tensor::zeros({0, c});
    pd.n_samples = 0;
    return pd;
  }

  const Variant v = model.spec().variant;
  if (v == Variant::ENSEMBLE) {
    pd.probs = Tensor::zeros({data.size(), c});
    for (std::size_t m = 0; m < model.num_members(); ++m) {
      pd.probs = pd.probs + pass_probs(model, data, nullptr, m, chunk_size);
    }
    pd.probs = (1.0 / static_cast<double>(model.num_members())) * pd.probs;
    pd.n_samples = model.num_members();
    return pd;
  }
  if (!is_stochastic(v)) {
    pd.probs = pass_probs(model, data, nullptr, 0, chunk_size);
    pd.n_samples = 1;
    return pd;
  }

  const RngStream root(seed, stream_id_for("evalkit/bma"));
  const Batch all = make_batch(data, 0, data.size());
  Tensor sum = Tensor::zeros({data.size(), c});
  for (std::size_t s = 0; s < n_samples; ++s) {
    RngStream rng = root.split(s);
    const NoiseBundle noise = model.sample_noise(rng, all.inputs);
    sum = sum + pass_probs(model, data, &noise, 0, chunk_size);
  }
  pd.probs = (1.0 / static_cast<double>(n_samples)) * sum;
  pd.n_samples = n_samples;
  return pd;
}

double accuracy(const Tensor& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (static_cast<int>(argmax_row(probs, r)) == labels[r]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const PredictiveDistribution& pd) { return accuracy(pd.probs, pd.labels); }

double nll(const Tensor& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    total -= std::log(std::max(probs(r, static_cast<std::size_t>(labels[r])), kNllFloor));
  }
  return total / static_cast<double>(labels.size());
}

double nll(const PredictiveDistribution& pd) { return nll(pd.probs, pd.labels); }

EceResult ece(const Tensor& probs, std::span<const int> labels, std::size_t num_bins) {
  if (num_bins < 1) throw ConfigError("ece: number of bins must be at least 1");
  check_labels(probs, labels);
  const double k = static_cast<double>(num_bins);
  EceResult res;
  res.bins.resize(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<std::size_t> hits(num_bins, 0);
  for (std::size_t b = 0; b < num_bins; ++b) {
    res.bins[b].lo = static_cast<double>(b) / k;
    res.bins[b].hi = static_cast<double>(b + 1) / k;
  }
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::size_t pred = argmax_row(probs, r);
    const double conf = probs(r, pred);
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(conf * k)) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(num_bins) - 1);
    // Snap to the exact edges so that lo < conf <= hi holds.
    while (idx > 0 && conf <= res.bins[idx].lo) --idx;
    while (idx + 1 < static_cast<std::ptrdiff_t>(num_bins) && conf > res.bins[idx].hi) ++idx;
    auto& bin = res.bins[static_cast<std::size_t>(idx)];
    ++bin.count;
    conf_sum[idx] += conf;
    if (static_cast<int>(pred) == labels[r]) ++hits[idx];
  }
  const double total = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    BinRow& bin = res.bins[b];
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.confidence = conf_sum[b] / cnt;
    bin.accuracy = static_cast<double>(hits[b]) / cnt;
    res.ece += (cnt / total) * std::abs(bin.accuracy - bin.confidence);
  }
  return res;
}

EceResult ece(const PredictiveDistribution& pd, std::size_t num_bins) {
  return ece(pd.probs, pd.labels, num_bins);
}

EvalReport make_report(const PredictiveDistribution& pd, std::uint64_t seed) {
  EvalReport r;
  r.acc = accuracy(pd);
  const EceResult e = ece(pd);
  r.ece = e.ece;
  r.bins = e.bins;
  r.nll = nll(pd);
  r.n_samples = pd.n_samples;
  r.seed = seed;
  r.num_examples = pd.size();
  r.method = to_string(pd.method.variant);
  return r;
}

EvalReport evaluate(Model& model, const Dataset& data, std::size_t n_samples, std::uint64_t seed,
                    std::size_t chunk_size) {
  EvalReport r = make_report(predict_bma(model, data, n_samples, seed, chunk_size), seed);
  const auto dims = model.adapted_layer_dims();
  r.additional_param_count = count_additional_params(model.spec(), dims);
  r.trainable_param_count = model.trainable_count();
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["split"] = r.split;
  j["delta"] = r.delta;
  j["seed"] = r.seed;
  j["n_samples"] = r.n_samples;
  j["num_examples"] = r.num_examples;
  j["acc"] = r.acc;
  j["ece"] = r.ece;
  j["nll"] = r.nll;
  j["additional_param_count"] = r.additional_param_count;
  j["trainable_param_count"] = r.trainable_param_count;
  auto bins = nlohmann::ordered_json::array();
  for (const BinRow& b : r.bins) {
    bins.push_back({{"bin_lo", b.lo}, {"bin_hi", b.hi}, {"count", b.count},
                    {"conf", b.confidence}, {"acc", b.accuracy}});
  }
  j["bins"] = std::move(bins);
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.method = j.at("method").get<std::string>();
    r.split = j.value("split", std::string{});
    r.delta = j.value("delta", 0.0);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.num_examples = j.value("num_examples", std::size_t{0});
    r.acc = j.at("acc").get<double>();
    r.ece = j.at("ece").get<double>();
    r.nll = j.at("nll").get<double>();
    r.additional_param_count = j.value("additional_param_count", std::size_t{0});
    r.trainable_param_count = j.value("trainable_param_count", std::size_t{0});
    for (const auto& b : j.value("bins", nlohmann::json::array())) {
      r.bins.push_back({b.at("bin_lo").get<double>(), b.at("bin_hi").get<double>(),
                        b.at("count").get<std::size_t>(), b.at("conf").get<double>(),
                        b.at("acc").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

std::string bins_csv(const std::vector<BinRow>& bins) {
  std::string out = "bin_lo,bin_hi,count,conf,acc\n";
  char buf[160];
  for (const BinRow& b : bins) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu,%.17g,%.17g\n", b.lo, b.hi, b.count,
                  b.confidence, b.accuracy);
    out += buf;
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::vector<SweepRow> sweep_samples(Model& model, const Dataset& data,
                                    std::span<const std::size_t> n_list, std::size_t repeats,
                                    std::uint64_t seed, std::size_t chunk_size) {
  if (n_list.empty()) throw ConfigError("sweep_samples: the sample grid is empty");
  if (repeats == 0) throw ConfigError("sweep_samples: repeats must be at least 1");
  const auto dims = model.adapted_layer_dims();
  const std::size_t per_draw = sampled_dims_per_draw(model.spec(), dims);
  std::vector<SweepRow> rows;
  for (std::size_t n : n_list) {
    if (n == 0) throw ConfigError("sweep_samples: sample counts must be at least 1");
    std::vector<double> acc, e, nl;
    for (std::size_t k = 0; k < repeats; ++k) {
      const EvalReport r = make_report(predict_bma(model, data, n, seed + k, chunk_size), seed + k);
      acc.push_back(r.acc);
      e.push_back(r.ece);
      nl.push_back(r.nll);
    }
    const double root = std::sqrt(static_cast<double>(repeats));
    const MeanStd a = mean_std(acc), ec = mean_std(e), l = mean_std(nl);
    rows.push_back({n, a.mean, a.std / root, ec.mean, ec.std / root, l.mean, l.std / root, n * per_draw});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "n_samples,acc_mean,acc_se,ece_mean,ece_se,nll_mean,nll_se,sampled_params\n";
  char buf[320];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", r.n_samples,
                  r.acc_mean, r.acc_se, r.ece_mean, r.ece_se, r.nll_mean, r.nll_se, r.sampled_params);
    out += buf;
  }
  return out;
}

}  // namespace scalabl
