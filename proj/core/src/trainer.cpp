// SPDX-License-Identifier: Apache-2.0
#include "scalabl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "scalabl/errors.hpp"
#include "scalabl/ops.hpp"

namespace scalabl {

std::string to_string(BetaSchedule s) {
  return s == BetaSchedule::Constant ? "constant" : "linear_warmup";
}

BetaSchedule parse_beta_schedule(const std::string& s) {
  if (s == "constant") return BetaSchedule::Constant;
  if (s == "linear_warmup" || s == "warmup" || s == "linear") return BetaSchedule::LinearWarmup;
  throw ConfigError("unknown beta schedule '" + s + "'; valid: constant, linear_warmup");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta_max >= 0.0)) throw ConfigError("beta_max must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup_fraction must lie in [0, 1]");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (eval_samples == 0) throw ConfigError("eval_samples must be at least 1");
}

double beta_at(std::size_t step, const TrainConfig& cfg) {
  if (cfg.beta_schedule == BetaSchedule::Constant) return cfg.beta_max;
  const double ramp = cfg.warmup_fraction * static_cast<double>(cfg.steps);
  if (ramp <= 0.0) return cfg.beta_max;
  return cfg.beta_max * std::min(1.0, static_cast<double>(step) / ramp);
}

StepResult elbo_step(Model& model, const Batch& batch, double beta, const NoiseBundle& noise,
                     std::size_t member) {
  if (batch.labels.empty()) throw ShapeError("elbo_step: empty batch");
  Tape tape;
  const Var logits = model.forward(tape, batch.inputs, noise, member);
  const Var nll = ad::cross_entropy(logits, batch.labels);
  const Var kl = model.kl(tape, member);
  const Var loss = ad::add(nll, ad::scale(kl, beta));
  tape.backward(loss);
  return {loss.value().item(), nll.value().item(), kl.value().item()};
}

StepResult elbo_step(Model& model, const Batch& batch, double beta, RngStream& rng,
                     std::size_t member) {
  return elbo_step(model, batch, beta, model.sample_noise(rng, batch.inputs), member);
}

void adamw_update(std::span<Parameter* const> params, AdamState& state, double lr,
                  std::span<const double> decay) {
  if (decay.size() != params.size()) throw ShapeError("adamw_update: decay/params size mismatch");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) {
      throw ShapeError("adamw_update: gradient shape mismatch for '" + p.name + "'");
    }
    auto [mit, mnew] = state.m.try_emplace(p.name, Tensor::zeros(p.value.shape()));
    auto [vit, vnew] = state.v.try_emplace(p.name, Tensor::zeros(p.value.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw ShapeError("adamw_update: optimizer state shape mismatch for '" + p.name + "'");
    }
    const double wd = decay[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g;
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g * g;
      if (wd != 0.0) p.value[k] *= 1.0 - lr * wd;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.data()) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model& model, const Dataset& data, TrainConfig cfg)
    : model_(model), data_(data), cfg_(std::move(cfg)),
      noise_rng_(cfg_.seed, stream_id_for("trainer/noise")) {
  cfg_.validate();
  if (data_.empty()) throw ConfigError("training set is empty");
  if (data_.num_classes() != model_.num_classes()) {
    throw ConfigError("dataset has " + std::to_string(data_.num_classes()) +
                      " classes but the model head has " + std::to_string(model_.num_classes()));
  }
  params_ = model_.trainable_parameters();
  const bool map = model_.spec().variant == Variant::MAP;
  for (Parameter* p : params_) {
    const std::string short_name = p->name.substr(p->name.rfind('.') + 1);
    decay_.push_back(map && !AdapterLayer::is_variational_param(short_name) ? cfg_.weight_decay : 0.0);
  }
  for (std::size_t m = 0; m < model_.num_members(); ++m) {
    std::vector<Parameter*> group;
    for (Parameter* p : model_.adapter_parameters(m))
      if (p->trainable) group.push_back(p);
    member_params_.push_back(std::move(group));
  }
  cached_epoch_.assign(model_.num_members(), ~std::uint64_t{0});
  cached_batches_.resize(model_.num_members());
}

const std::vector<std::size_t>& Trainer::epoch_batch(std::size_t member, std::uint64_t step) {
  const std::uint64_t per_epoch = (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  const std::uint64_t epoch = step / per_epoch;
  if (cached_epoch_[member] != epoch) {
    cached_batches_[member] = batches(data_, cfg_.batch_size, cfg_.seed + member, epoch);
    cached_epoch_[member] = epoch;
  }
  return cached_batches_[member][step % per_epoch];
}

LogRow Trainer::step_once() {
  if (done()) throw std::logic_error("Trainer::step_once past the configured step count");
  const bool variational = is_variational(model_.spec().variant);
  const double beta = variational ? beta_at(step_, cfg_) : 0.0;
  for (Parameter* p : params_) p->zero_grad();
  StepResult total;
  const std::size_t members = model_.num_members();
  for (std::size_t m = 0; m < members; ++m) {
    const Batch batch = make_batch(data_, epoch_batch(m, step_));
    RngStream rng = noise_rng_.split(step_).split(m);
    const NoiseBundle noise = model_.sample_noise(rng, batch.inputs);
    StepResult r;
    try {
      r = elbo_step(model_, batch, beta, noise, m);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step_) +
                         (members > 1 ? " (member " + std::to_string(m) + ")" : "") + ": " +
                         e.what());
    }
    if (!std::isfinite(r.loss)) {
      throw NumericError("training diverged at step " + std::to_string(step_) + ": loss is not finite");
    }
    clip_grad_norm(member_params_[m], cfg_.grad_clip);
    total.loss += r.loss;
    total.nll += r.nll;
    total.kl += r.kl;
  }
  adamw_update(params_, adam_, cfg_.learning_rate, decay_);
  const double inv = 1.0 / static_cast<double>(members);
  LogRow row{step_, total.loss * inv, total.nll * inv, total.kl * inv, beta};
  ++step_;
  return row;
}

std::vector<LogRow> Trainer::run(std::optional<std::size_t> until_step) {
  const std::size_t end = std::min<std::size_t>(until_step.value_or(cfg_.steps), cfg_.steps);
  std::vector<LogRow> rows;
  while (step_ < end) rows.push_back(step_once());
  return rows;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.method = model_.spec();
  c.train = cfg_;
  c.host = model_.host();
  c.step = step_;
  c.noise_rng = noise_rng_;
  c.base_fingerprint = model_.base_fingerprint();
  c.data_fingerprint = data_.fingerprint();
  for (std::size_t m = 0; m < model_.num_members(); ++m) {
    for (const auto& layer : model_.adapters(m)) {
      for (const auto& p : layer.parameters()) {
        c.params.push_back({p.name, p.value});
        if (auto it = adam_.m.find(p.name); it != adam_.m.end()) {
          c.adam_m.push_back({p.name, it->second});
          c.adam_v.push_back({p.name, adam_.v.at(p.name)});
        }
      }
    }
  }
  c.adam_t = adam_.t;
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (!(ckpt.train == cfg_)) {
    throw IncompatibleCheckpoint("checkpoint training config differs from the resume config");
  }
  if (ckpt.data_fingerprint != 0 && ckpt.data_fingerprint != data_.fingerprint()) {
    throw IncompatibleCheckpoint("checkpoint was trained on a different dataset");
  }
  apply_checkpoint(model_, ckpt);
  step_ = ckpt.step;
  noise_rng_ = ckpt.noise_rng;
  adam_ = AdamState{};
  for (const auto& nt : ckpt.adam_m) adam_.m[nt.name] = nt.value;
  for (const auto& nt : ckpt.adam_v) adam_.v[nt.name] = nt.value;
  adam_.t = ckpt.adam_t;
}

Checkpoint train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 std::vector<LogRow>* log) {
  Trainer trainer(model, data, cfg);
  auto rows = trainer.run();
  if (log != nullptr) log->insert(log->end(), rows.begin(), rows.end());
  return trainer.checkpoint();
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
  if (!(ckpt.method == model.spec())) {
    throw IncompatibleCheckpoint("checkpoint method '" + to_string(ckpt.method.variant) + "' (" +
                                 to_string(ckpt.method.covariance) + ", rank " +
                                 std::to_string(ckpt.method.rank) +
                                 ") does not match model method '" +
                                 to_string(model.spec().variant) + "' (" +
                                 to_string(model.spec().covariance) + ", rank " +
                                 std::to_string(model.spec().rank) + ")");
  }
  if (ckpt.base_fingerprint != 0 && ckpt.base_fingerprint != model.base_fingerprint()) {
    throw IncompatibleCheckpoint("checkpoint was trained against a different frozen base");
  }
  std::vector<Parameter*> params = model.adapter_parameters();
  if (params.size() != ckpt.params.size()) {
    throw IncompatibleCheckpoint("checkpoint holds " + std::to_string(ckpt.params.size()) +
                                 " adapter tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& nt = ckpt.params[i];
    if (nt.name != params[i]->name || nt.value.shape() != params[i]->value.shape()) {
      throw IncompatibleCheckpoint("checkpoint tensor '" + nt.name + "' " + shape_str(nt.value.shape()) +
                                   " does not match model tensor '" + params[i]->name + "' " +
                                   shape_str(params[i]->value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = ckpt.params[i].value;
    params[i]->zero_grad();
  }
}

void pretrain_base(Model& model, const Dataset& data, std::size_t steps, double lr,
                   std::size_t batch_size, std::uint64_t seed) {
  if (steps == 0) return;
  model.set_base_trainable(true);
  std::vector<Parameter*> params;
  for (auto& p : model.base_parameters()) params.push_back(&p);
  const std::vector<double> decay(params.size(), 0.0);
  AdamState adam;
  const std::size_t per_epoch = (data.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> order;
  std::uint64_t cached = ~std::uint64_t{0};
  for (std::size_t step = 0; step < steps; ++step) {
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != cached) {
      order = batches(data, batch_size, seed, epoch);
      cached = epoch;
    }
    const Batch batch = make_batch(data, order[step % per_epoch]);
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    const Var loss = ad::cross_entropy(model.forward_base(tape, batch.inputs), batch.labels);
    tape.backward(loss);
    clip_grad_norm(params, 1.0);
    adamw_update(params, adam, lr, decay);
  }
  model.set_base_trainable(false);
}

void write_log_csv(std::span<const LogRow> rows, const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw FormatError("cannot write training log " + path);
  if (!append) out << "step,loss,nll,kl,beta\n";
  char buf[256];
  for (const LogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.step), r.loss, r.nll, r.kl, r.beta);
    out << buf;
  }
}

}  // namespace scalabl
