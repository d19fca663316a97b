// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scalabl/adapters.hpp"
#include "scalabl/datakit.hpp"
#include "scalabl/netzoo.hpp"
#include "scalabl/tensor.hpp"

namespace scalabl {

struct PredictiveDistribution {
  Tensor probs;             // [num_examples x C]
  std::vector<int> labels;
  MethodSpec method;
  std::size_t n_samples = 1;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return probs.cols(); }
};

inline constexpr std::size_t kEceBins = 15;
inline constexpr double kNllFloor = 1e-12;

/// Row-wise softmax of a logits matrix.
Tensor softmax_rows(const Tensor& logits);

/// Averages softmax probabilities over `n_samples` posterior draws. Each draw
/// uses one noise bundle for the whole dataset, from stream `seed` split by the
/// draw index. Deterministic variants make one pass; ensembles average their
/// members.
PredictiveDistribution predict_bma(Model& model, const Dataset& data, std::size_t n_samples,
                                   std::uint64_t seed, std::size_t chunk_size = 512);

/// Argmax accuracy; ties go to the lowest class index.
double accuracy(const PredictiveDistribution& pd);
double accuracy(const Tensor& probs, std::span<const int> labels);

/// Mean -log p(label), with p floored at 1e-12.
double nll(const PredictiveDistribution& pd);
double nll(const Tensor& probs, std::span<const int> labels);

struct BinRow {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean max-probability in the bin (0 when empty)
  double accuracy = 0.0;    // fraction correct in the bin (0 when empty)
};

struct EceResult {
  double ece = 0.0;
  std::vector<BinRow> bins;
};

/// Equal-width, right-closed bins on (0, 1]: confidence c lands in bin
/// ceil(c K), with c = 0 in the first bin.
EceResult ece(const PredictiveDistribution& pd, std::size_t num_bins = kEceBins);
EceResult ece(const Tensor& probs, std::span<const int> labels, std::size_t num_bins = kEceBins);

struct EvalReport {
  double acc = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  std::vector<BinRow> bins;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::size_t additional_param_count = 0;
  std::size_t trainable_param_count = 0;
  std::size_t num_examples = 0;
  std::string method;
  std::string split;
  double delta = 0.0;
};

EvalReport make_report(const PredictiveDistribution& pd, std::uint64_t seed);
EvalReport evaluate(Model& model, const Dataset& data, std::size_t n_samples, std::uint64_t seed,
                    std::size_t chunk_size = 512);

std::string report_json(const EvalReport& r);
EvalReport parse_report_json(const std::string& text);
/// bin_lo,bin_hi,count,conf,acc
std::string bins_csv(const std::vector<BinRow>& bins);

struct SweepRow {
  std::size_t n_samples = 0;
  double acc_mean = 0.0, acc_se = 0.0;
  double ece_mean = 0.0, ece_se = 0.0;
  double nll_mean = 0.0, nll_se = 0.0;
  std::size_t sampled_params = 0;  // n_samples x sampled dimensions per draw
};

/// Per N: mean and standard error of each metric over `repeats` evaluation
/// seeds (seed, seed + 1, ...).
std::vector<SweepRow> sweep_samples(Model& model, const Dataset& data,
                                    std::span<const std::size_t> n_list, std::size_t repeats,
                                    std::uint64_t seed, std::size_t chunk_size = 512);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Mean and sample standard deviation (n - 1; zero for a single value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace scalabl
