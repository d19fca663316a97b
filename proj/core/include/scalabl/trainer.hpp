// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalabl/autodiff.hpp"
#include "scalabl/datakit.hpp"
#include "scalabl/netzoo.hpp"

namespace scalabl {

enum class BetaSchedule { Constant, LinearWarmup };

std::string to_string(BetaSchedule s);
BetaSchedule parse_beta_schedule(const std::string& s);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double beta_max = 0.1;
  BetaSchedule beta_schedule = BetaSchedule::LinearWarmup;
  double warmup_fraction = 0.5;
  double weight_decay = 1e-2;  // MAP only
  std::uint64_t seed = 0;
  std::size_t eval_samples = 10;
  double grad_clip = 1.0;      // global-norm clip; <= 0 disables

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// KL weight at `step`: beta_max, or a linear ramp over the first
/// warmup_fraction * steps steps.
double beta_at(std::size_t step, const TrainConfig& cfg);

struct StepResult {
  double loss = 0.0;  // nll + beta * kl
  double nll = 0.0;   // mean cross-entropy over the batch
  double kl = 0.0;    // summed over adapted layers
};

/// Builds the negative ELBO for one batch under fixed noise and runs the
/// backward pass; gradients accumulate into the parameters.
StepResult elbo_step(Model& model, const Batch& batch, double beta, const NoiseBundle& noise,
                     std::size_t member = 0);
/// Same, drawing one fresh noise bundle from `rng`.
StepResult elbo_step(Model& model, const Batch& batch, double beta, RngStream& rng,
                     std::size_t member = 0);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Decoupled-weight-decay Adam step. `decay[i]` is the weight decay applied
/// to params[i] (zero for variational parameters).
void adamw_update(std::span<Parameter* const> params, AdamState& state, double lr,
                  std::span<const double> decay);

/// Scales gradients so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct LogRow {
  std::uint64_t step;
  double loss;
  double nll;
  double kl;
  double beta;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  bool operator==(const NamedTensor&) const = default;
};

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to evaluate or resume a run.
struct Checkpoint {
  int version = kCheckpointVersion;
  MethodSpec method;
  TrainConfig train;
  HostConfig host;
  std::uint64_t step = 0;
  RngStream noise_rng;
  std::uint64_t base_fingerprint = 0;
  std::uint64_t data_fingerprint = 0;
  std::vector<NamedTensor> params;  // every adapter parameter, in model order
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;
  std::uint64_t adam_t = 0;

  bool operator==(const Checkpoint&) const = default;
};

/// Runs the training loop step by step; resumable from a Checkpoint.
///
/// Every variant shares the loop: a batch from the seeded epoch permutation,
/// one noise draw per adapted layer shared across the batch (variational and
/// dropout variants), loss = mean CE + beta_t * KL, backward, global-norm
/// clip, AdamW. ENSEMBLE members step in lockstep with their own batch order
/// (seed + i), noise streams and clipping.
class Trainer {
 public:
  Trainer(Model& model, const Dataset& data, TrainConfig cfg);

  const TrainConfig& config() const noexcept { return cfg_; }
  std::uint64_t step() const noexcept { return step_; }
  bool done() const noexcept { return step_ >= cfg_.steps; }

  LogRow step_once();
  /// Trains until `until_step` (clamped to cfg.steps) and returns the log rows.
  std::vector<LogRow> run(std::optional<std::size_t> until_step = std::nullopt);

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer state, step counter and RNG state.
  void restore(const Checkpoint& ckpt);

 private:
  const std::vector<std::size_t>& epoch_batch(std::size_t member, std::uint64_t step);

  Model& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  std::uint64_t step_ = 0;
  RngStream noise_rng_;
  AdamState adam_;
  std::vector<Parameter*> params_;
  std::vector<double> decay_;
  std::vector<std::vector<Parameter*>> member_params_;
  std::vector<std::uint64_t> cached_epoch_;
  std::vector<std::vector<std::vector<std::size_t>>> cached_batches_;
};

/// Trains from initialization for cfg.steps; `log` receives one row per step.
Checkpoint train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 std::vector<LogRow>* log = nullptr);

/// Copies checkpointed adapter parameters into `model`. Throws
/// IncompatibleCheckpoint on method, name or shape disagreement.
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

/// Briefly trains every base weight on `data` with plain Adam, then freezes
/// the base again.
void pretrain_base(Model& model, const Dataset& data, std::size_t steps, double lr,
                   std::size_t batch_size, std::uint64_t seed);

/// Atomic write (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_log_csv(std::span<const LogRow> rows, const std::string& path, bool append = false);

}  // namespace scalabl
