// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scalabl/config.hpp"
#include "scalabl/evalkit.hpp"
#include "scalabl/trainer.hpp"

namespace scalabl::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUserError = 1, kNumericError = 2 };

/// Environment variable naming the default output root.
inline constexpr const char* kOutRootEnv = "SCALABL_OUT_ROOT";

/// Datasets, resolved host and model for one config.
struct Run {
  Splits data;
  HostConfig host;
  std::unique_ptr<Model> model;
};

Splits load_data(const DataConfig& cfg);
/// Builds the model the config describes: deterministic base (pretrained if
/// configured) plus freshly initialized adapters seeded by train.seed.
Run build_run(const RunConfig& cfg);

/// Display name: the variant plus "+full_rank" / "+freeze_A" modifiers.
std::string method_label(const MethodSpec& m);
/// Inverse of method_label; also accepts "scalabl:full_rank" style.
MethodSpec parse_method_label(const std::string& label, const MethodSpec& defaults);

/// Default output directory: $SCALABL_OUT_ROOT (or ./runs) / <label>-seed<k>.
fs::path default_out_dir(const RunConfig& cfg);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
};
/// Writes config.resolved, checkpoint.bin and train_log.csv into `out`.
TrainResult cmd_train(const RunConfig& cfg, const fs::path& out);

/// Writes eval_seed{k}.json (plus the bin CSV) per seed and aggregate.json.
/// `dataset` may be "id", "ood" or a JSONL path; empty means cfg.eval.split.
std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const fs::path& out,
                                 const std::optional<fs::path>& checkpoint = std::nullopt,
                                 const std::string& dataset = {});

struct CompareRow {
  std::string method;
  std::size_t params = 0;
  std::size_t additional_params = 0;
  MeanStd acc, ece, nll;
};
/// Reads aggregate.json from each run directory; all runs must share the
/// same data section.
std::vector<CompareRow> collect_runs(const std::vector<fs::path>& runs);
std::string compare_csv(const std::vector<CompareRow>& rows);
std::string compare_text(const std::vector<CompareRow>& rows);
/// Trains and evaluates every method (under out/<label>) unless `runs` are
/// given, then writes compare.csv and compare.txt.
std::vector<CompareRow> cmd_compare(const RunConfig& cfg, const fs::path& out,
                                    const std::vector<std::string>& methods,
                                    const std::vector<fs::path>& runs = {});

/// kind = "samples": sweep_samples on the trained checkpoint (trained first if
/// absent). kind = "rank": one run per rank in cfg.sweep.ranks for each method.
void cmd_sweep(const RunConfig& cfg, const fs::path& out, const std::string& kind,
               const std::vector<std::string>& methods = {});

/// Full command-line entry point; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scalabl::cli
