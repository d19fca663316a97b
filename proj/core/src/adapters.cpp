// SPDX-License-Identifier: Apache-2.0
#include "scalabl/adapters.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "scalabl/errors.hpp"
#include "scalabl/linalg.hpp"
#include "scalabl/ops.hpp"

namespace scalabl {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void require_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(what) + " has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(shape));
  }
}

void check_forward_shapes(const Tensor& x, const Tensor& w0, std::size_t r, const Tensor& a,
                          const Tensor& b) {
  if (x.rank() != 2 || w0.rank() != 2) throw ShapeError("x and W0 must be matrices");
  const std::size_t n = w0.rows(), d = w0.cols();
  if (x.cols() != d) {
    throw ShapeError("x has " + std::to_string(x.cols()) + " columns, W0 expects " +
                     std::to_string(d));
  }
  require_shape(a, {r, d}, "A");
  require_shape(b, {n, r}, "B");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MLE: return "mle";
    case Variant::MAP: return "map";
    case Variant::MC_DROPOUT: return "mc_dropout";
    case Variant::ENSEMBLE: return "ensemble";
    case Variant::BLOB: return "blob";
    case Variant::SCALABL: return "scalabl";
  }
  return "unknown";
}

std::string to_string(Covariance c) {
  return c == Covariance::Diagonal ? "diagonal" : "full_rank";
}

Variant parse_variant(const std::string& name) {
  const std::string n = lower(name);
  for (Variant v : {Variant::MLE, Variant::MAP, Variant::MC_DROPOUT, Variant::ENSEMBLE,
                    Variant::BLOB, Variant::SCALABL}) {
    if (n == to_string(v)) return v;
  }
  if (n == "mcdropout" || n == "mc-dropout" || n == "dropout") return Variant::MC_DROPOUT;
  throw ConfigError("unknown method '" + name +
                    "'; valid variants: mle, map, mc_dropout, ensemble, blob, scalabl");
}

Covariance parse_covariance(const std::string& name) {
  const std::string n = lower(name);
  if (n == "diagonal" || n == "diag") return Covariance::Diagonal;
  if (n == "full_rank" || n == "full" || n == "fullrank") return Covariance::FullRank;
  throw ConfigError("unknown covariance '" + name + "'; valid: diagonal, full_rank");
}

void MethodSpec::validate() const {
  if (rank == 0) throw ConfigError("rank must be positive");
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  if (variant != Variant::SCALABL && covariance == Covariance::FullRank) {
    throw ConfigError("full_rank covariance is only valid with the scalabl variant");
  }
  if (variant != Variant::SCALABL && freeze_A) {
    throw ConfigError("freeze_A is only valid with the scalabl variant");
  }
  if (variant == Variant::ENSEMBLE && ensemble_size < 1) {
    throw ConfigError("ensemble_size must be at least 1");
  }
}

bool is_variational(Variant v) { return v == Variant::BLOB || v == Variant::SCALABL; }

bool is_stochastic(Variant v) { return is_variational(v) || v == Variant::MC_DROPOUT; }

std::size_t effective_rank(std::size_t rank, const LayerDims& dims) {
  return std::min({rank, dims.out_dim, dims.in_dim});
}

std::size_t count_lora_params(std::size_t rank, std::span<const LayerDims> layers) {
  std::size_t total = 0;
  for (const auto& l : layers) total += effective_rank(rank, l) * (l.out_dim + l.in_dim);
  return total;
}

std::size_t count_additional_params(const MethodSpec& spec, std::span<const LayerDims> layers) {
  std::size_t total = 0;
  for (const auto& l : layers) {
    const std::size_t r = effective_rank(spec.rank, l);
    switch (spec.variant) {
      case Variant::SCALABL:
        total += 2 * r;
        if (spec.covariance == Covariance::FullRank) total += r + r * r;
        break;
      case Variant::BLOB:
        total += r * l.in_dim;
        break;
      case Variant::ENSEMBLE:
        total += (spec.ensemble_size - 1) * r * (l.out_dim + l.in_dim);
        break;
      case Variant::MLE:
      case Variant::MAP:
      case Variant::MC_DROPOUT:
        break;
    }
  }
  return total;
}

std::size_t sampled_dims_per_draw(const MethodSpec& spec, std::span<const LayerDims> layers) {
  std::size_t total = 0;
  for (const auto& l : layers) {
    const std::size_t r = effective_rank(spec.rank, l);
    if (spec.variant == Variant::SCALABL) total += r;
    else if (spec.variant == Variant::BLOB) total += r * l.in_dim;
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace graph {

Var lora_delta(const Var& x, const Var& a, const Var& b) {
  return ad::matmul_nt(ad::matmul_nt(x, a), b);
}

Var subspace_delta(const Var& x, const Var& a, const Var& s, const Var& b) {
  return ad::matmul_nt(ad::mul_rowvec(ad::matmul_nt(x, a), s), b);
}

Var diag_sample(const Var& log_mu, const Var& log_sigma, const Var& eps) {
  return ad::add(ad::exp(log_mu), ad::mul(ad::exp(log_sigma), eps));
}

Var fullrank_factor(const Var& e_hat, const Var& log_e) {
  const Var e = ad::qr(e_hat).first;
  const Var sigma = ad::matmul_nt(ad::matmul(e, ad::diag_embed(ad::exp(log_e))), e);
  return ad::cholesky(sigma);
}

Var fullrank_sample(const Var& log_mu, const Var& e_hat, const Var& log_e, const Var& eps) {
  const std::size_t r = eps.value().size();
  const Var l = fullrank_factor(e_hat, log_e);
  const Var shift = ad::reshape(ad::matmul(l, ad::reshape(eps, {r, 1})), {r});
  return ad::add(ad::exp(log_mu), shift);
}

Var kl_diag(const Var& mu, const Var& log_sigma) {
  // 1/2 sum(mu^2 + exp(2 log_sigma) - 1 - 2 log_sigma)
  const Var var = ad::exp(ad::scale(log_sigma, 2.0));
  const Var terms = ad::sub(ad::add(ad::mul(mu, mu), var), ad::scale(log_sigma, 2.0));
  const auto k = static_cast<double>(mu.value().size());
  return ad::scale(ad::add_scalar(ad::sum(terms), -k), 0.5);
}

Var kl_fullrank(const Var& mu, const Var& log_e) {
  // The trace of E diag(e) E^T equals sum(e) for orthonormal E.
  const auto r = static_cast<double>(mu.value().size());
  const Var terms = ad::sub(ad::add(ad::exp(log_e), ad::mul(mu, mu)), log_e);
  return ad::scale(ad::add_scalar(ad::sum(terms), -r), 0.5);
}

}  // namespace graph

// ---------------------------------------------------------------------------

Tensor lora_forward(const Tensor& x, const Tensor& w0, const LoraParams& p) {
  check_forward_shapes(x, w0, p.rank(), p.a, p.b);
  Tape tape;
  const Var xv = tape.constant(x);
  const Var base = ad::matmul_nt(xv, tape.constant(w0));
  return ad::add(base, graph::lora_delta(xv, tape.constant(p.a), tape.constant(p.b))).value();
}

ScalaBLParams scalabl_init(std::size_t d, std::size_t n, std::size_t r, double rho,
                           RngStream& rng) {
  if (r == 0 || d == 0 || n == 0) throw ShapeError("scalabl_init: degenerate dimensions");
  if (r > std::min(n, d)) {
    throw ShapeError("scalabl_init: rank " + std::to_string(r) + " exceeds min(n, d)");
  }
  if (!(rho > 0.0)) throw ConfigError("scalabl_init: rho must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(d));
  const Tensor z = uniform_tensor(rng, {r, d}, -bound, bound);
  SvdResult svd = svd_truncated(z);
  ScalaBLParams p;
  p.lora.a = std::move(svd.v);
  p.lora.b = Tensor::zeros({n, r});
  p.log_s_mu = Tensor({r});
  p.log_s_sigma = Tensor({r});
  for (std::size_t i = 0; i < r; ++i) {
    p.log_s_mu[i] = std::log(std::max(svd.s[i], kSingularValueFloor));
    p.log_s_sigma[i] = std::log(rng.uniform(rho / std::sqrt(2.0), rho));
  }
  return p;
}

Tensor sample_subspace(const ScalaBLParams& p, const FullRankExtras* extras, const Tensor& eps) {
  const std::size_t r = p.log_s_mu.size();
  require_shape(eps, {r}, "eps");
  Tape tape;
  const Var log_mu = tape.constant(p.log_s_mu);
  const Var e = tape.constant(eps);
  if (extras == nullptr) {
    return graph::diag_sample(log_mu, tape.constant(p.log_s_sigma), e).value();
  }
  require_shape(extras->e_hat, {r, r}, "E_hat");
  require_shape(extras->log_e, {r}, "log_e");
  return graph::fullrank_sample(log_mu, tape.constant(extras->e_hat),
                                tape.constant(extras->log_e), e)
      .value();
}

Tensor scalabl_forward(const Tensor& x, const Tensor& w0, const ScalaBLParams& p,
                       const Tensor& s_t) {
  check_forward_shapes(x, w0, p.lora.rank(), p.lora.a, p.lora.b);
  require_shape(s_t, {p.lora.rank()}, "s_t");
  Tape tape;
  const Var xv = tape.constant(x);
  const Var base = ad::matmul_nt(xv, tape.constant(w0));
  const Var delta = graph::subspace_delta(xv, tape.constant(p.lora.a), tape.constant(s_t),
                                          tape.constant(p.lora.b));
  return ad::add(base, delta).value();
}

Tensor blob_forward(const Tensor& x, const Tensor& w0, const BlobParams& p, const Tensor& eps) {
  const std::size_t r = p.a_mu.rows();
  check_forward_shapes(x, w0, r, p.a_mu, p.b);
  require_shape(p.log_a_sigma, p.a_mu.shape(), "log_A_sigma");
  require_shape(eps, p.a_mu.shape(), "eps");
  Tape tape;
  const Var xv = tape.constant(x);
  const Var base = ad::matmul_nt(xv, tape.constant(w0));
  const Var a = ad::add(tape.constant(p.a_mu),
                        ad::mul(ad::exp(tape.constant(p.log_a_sigma)), tape.constant(eps)));
  return ad::add(base, graph::lora_delta(xv, a, tape.constant(p.b))).value();
}

double kl_diag_gaussian(const Tensor& mu, const Tensor& sigma) {
  if (mu.shape() != sigma.shape()) throw ShapeError("kl_diag_gaussian: mu/sigma shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = sigma[i];
    if (!(s > 0.0)) throw NumericError("kl_diag_gaussian: nonpositive sigma at index " + std::to_string(i));
    total += mu[i] * mu[i] + s * s - 1.0 - 2.0 * std::log(s);
  }
  return 0.5 * total;
}

double kl_fullrank_gaussian(const Tensor& mu, const FullRankExtras& extras) {
  const std::size_t r = mu.size();
  require_shape(extras.e_hat, {r, r}, "E_hat");
  require_shape(extras.log_e, {r}, "log_e");
  // Validates that Sigma is positive definite.
  Tape tape;
  (void)graph::fullrank_factor(tape.constant(extras.e_hat), tape.constant(extras.log_e));
  return graph::kl_fullrank(tape.constant(mu), tape.constant(extras.log_e)).value().item();
}

Tensor dropout_mask(RngStream& rng, Shape shape, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  Tensor mask(std::move(shape));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rate > 0.0 && rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

Tensor mc_dropout_forward(const Tensor& x, const Tensor& w0, const LoraParams& p, double rate,
                          RngStream& rng) {
  check_forward_shapes(x, w0, p.rank(), p.a, p.b);
  const Tensor mask = dropout_mask(rng, x.shape(), rate);
  Tape tape;
  const Var xv = tape.constant(x);
  const Var base = ad::matmul_nt(xv, tape.constant(w0));
  const Var dropped = ad::mul(xv, tape.constant(mask));
  return ad::add(base, graph::lora_delta(dropped, tape.constant(p.a), tape.constant(p.b))).value();
}

// ---------------------------------------------------------------------------

AdapterLayer::AdapterLayer(std::string name, LayerDims dims, const MethodSpec& spec,
                           RngStream& init_rng)
    : name_(std::move(name)), dims_(dims), spec_(spec), rank_(effective_rank(spec.rank, dims)) {
  spec_.validate();
  const std::size_t r = rank_, d = dims.in_dim, n = dims.out_dim;
  if (r == 0) throw ShapeError("adapter '" + name_ + "' has zero rank");
  auto add = [&](const char* short_name, Tensor value, bool trainable = true) {
    params_.emplace_back(name_ + "." + short_name, std::move(value), trainable);
  };
  const double bound = std::sqrt(1.0 / static_cast<double>(d));
  switch (spec.variant) {
    case Variant::SCALABL: {
      ScalaBLParams p = scalabl_init(d, n, r, spec.rho, init_rng);
      add("A", std::move(p.lora.a), !spec.freeze_A);
      add("B", std::move(p.lora.b));
      add("log_s_mu", std::move(p.log_s_mu));
      if (spec.covariance == Covariance::Diagonal) {
        add("log_s_sigma", std::move(p.log_s_sigma));
      } else {
        // Full rank: Sigma starts at diag(s_sigma^2) with E_hat = I. log_s_sigma
        // is kept (and counted) but the Cholesky factor replaces it in sampling.
        Tensor log_e({r});
        for (std::size_t i = 0; i < r; ++i) log_e[i] = 2.0 * p.log_s_sigma[i];
        add("log_s_sigma", std::move(p.log_s_sigma));
        add("E_hat", Tensor::eye(r));
        add("log_e", std::move(log_e));
      }
      break;
    }
    case Variant::BLOB: {
      add("A_mu", uniform_tensor(init_rng, {r, d}, -bound, bound));
      Tensor log_sigma({r, d});
      for (double& v : log_sigma.data()) {
        v = std::log(init_rng.uniform(spec.rho / std::sqrt(2.0), spec.rho));
      }
      add("log_A_sigma", std::move(log_sigma));
      add("B", Tensor::zeros({n, r}));
      break;
    }
    case Variant::MLE:
    case Variant::MAP:
    case Variant::MC_DROPOUT:
    case Variant::ENSEMBLE:
      add("A", uniform_tensor(init_rng, {r, d}, -bound, bound));
      add("B", Tensor::zeros({n, r}));
      break;
  }
}

bool AdapterLayer::has_param(const std::string& short_name) const {
  const std::string full = name_ + "." + short_name;
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == full; });
}

Parameter& AdapterLayer::param(const std::string& short_name) {
  const std::string full = name_ + "." + short_name;
  for (Parameter& p : params_)
    if (p.name == full) return p;
  throw std::out_of_range("adapter '" + name_ + "' has no parameter '" + short_name + "'");
}

const Parameter& AdapterLayer::param(const std::string& short_name) const {
  return const_cast<AdapterLayer*>(this)->param(short_name);
}

bool AdapterLayer::is_variational_param(const std::string& short_name) {
  std::string s = short_name;
  if (const auto dot = s.rfind('.'); dot != std::string::npos) s = s.substr(dot + 1);
  return s == "log_s_mu" || s == "log_s_sigma" || s == "E_hat" || s == "log_e" ||
         s == "A_mu" || s == "log_A_sigma";
}

Tensor AdapterLayer::sample_noise(RngStream& rng, std::size_t rows) const {
  switch (spec_.variant) {
    case Variant::SCALABL: return standard_normal(rng, {rank_});
    case Variant::BLOB: return standard_normal(rng, {rank_, dims_.in_dim});
    case Variant::MC_DROPOUT: return dropout_mask(rng, {rows, dims_.in_dim}, spec_.dropout_rate);
    default: return {};
  }
}

Var AdapterLayer::adapter_input(Tape& tape, const Var& x, const Tensor& noise) {
  if (spec_.variant != Variant::MC_DROPOUT || noise.empty()) return x;
  if (noise.shape() != x.shape()) {
    throw ShapeError("dropout mask " + shape_str(noise.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  return ad::mul(x, tape.constant(noise));
}

Var AdapterLayer::forward(Tape& tape, const Var& x, const Var& w0, const Tensor& noise) {
  const Var base = ad::matmul_nt(x, w0);
  switch (spec_.variant) {
    case Variant::SCALABL: {
      if (noise.shape() != Shape{rank_}) {
        throw ShapeError("adapter '" + name_ + "' needs eps of shape [" + std::to_string(rank_) +
                         "], got " + shape_str(noise.shape()));
      }
      const Var eps = tape.constant(noise);
      const Var log_mu = tape.param(param("log_s_mu"));
      const Var s = spec_.covariance == Covariance::Diagonal
                        ? graph::diag_sample(log_mu, tape.param(param("log_s_sigma")), eps)
                        : graph::fullrank_sample(log_mu, tape.param(param("E_hat")),
                                                 tape.param(param("log_e")), eps);
      return ad::add(base, graph::subspace_delta(x, tape.param(param("A")), s,
                                                 tape.param(param("B"))));
    }
    case Variant::BLOB: {
      if (noise.shape() != Shape{rank_, dims_.in_dim}) {
        throw ShapeError("adapter '" + name_ + "' needs eps of shape " +
                         shape_str({rank_, dims_.in_dim}) + ", got " + shape_str(noise.shape()));
      }
      const Var a = ad::add(tape.param(param("A_mu")),
                            ad::mul(ad::exp(tape.param(param("log_A_sigma"))),
                                    tape.constant(noise)));
      return ad::add(base, graph::lora_delta(x, a, tape.param(param("B"))));
    }
    default: {
      const Var xin = adapter_input(tape, x, noise);
      return ad::add(base,
                     graph::lora_delta(xin, tape.param(param("A")), tape.param(param("B"))));
    }
  }
}

Var AdapterLayer::forward_mean(Tape& tape, const Var& x, const Var& w0) {
  switch (spec_.variant) {
    case Variant::SCALABL:
      if (spec_.covariance == Covariance::Diagonal) {
        return ad::add(ad::matmul_nt(x, w0),
                       graph::subspace_delta(x, tape.param(param("A")),
                                             ad::exp(tape.param(param("log_s_mu"))),
                                             tape.param(param("B"))));
      }
      return forward(tape, x, w0, Tensor::zeros({rank_}));
    case Variant::BLOB:
      return ad::add(ad::matmul_nt(x, w0), graph::lora_delta(x, tape.param(param("A_mu")),
                                                             tape.param(param("B"))));
    default:
      return forward(tape, x, w0, Tensor{});
  }
}

Var AdapterLayer::kl(Tape& tape) {
  switch (spec_.variant) {
    case Variant::SCALABL: {
      const Var mu = ad::exp(tape.param(param("log_s_mu")));
      if (spec_.covariance == Covariance::Diagonal) {
        return graph::kl_diag(mu, tape.param(param("log_s_sigma")));
      }
      return graph::kl_fullrank(mu, tape.param(param("log_e")));
    }
    case Variant::BLOB:
      return graph::kl_diag(tape.param(param("A_mu")), tape.param(param("log_A_sigma")));
    default:
      return tape.constant(Tensor::scalar(0.0));
  }
}

LoraParams AdapterLayer::lora_params() const {
  if (has_param("A")) return {param("A").value, param("B").value};
  return {param("A_mu").value, param("B").value};
}

ScalaBLParams AdapterLayer::scalabl_params() const {
  if (spec_.variant != Variant::SCALABL) throw std::logic_error("not a scalabl adapter");
  return {lora_params(), param("log_s_mu").value, param("log_s_sigma").value};
}

std::optional<FullRankExtras> AdapterLayer::fullrank_extras() const {
  if (!has_param("E_hat")) return std::nullopt;
  return FullRankExtras{param("E_hat").value, param("log_e").value};
}

BlobParams AdapterLayer::blob_params() const {
  if (spec_.variant != Variant::BLOB) throw std::logic_error("not a blob adapter");
  return {param("A_mu").value, param("log_A_sigma").value, param("B").value};
}

}  // namespace scalabl
