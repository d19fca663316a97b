// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalabl/autodiff.hpp"
#include "scalabl/rng.hpp"
#include "scalabl/tensor.hpp"

namespace scalabl {

enum class Variant { MLE, MAP, MC_DROPOUT, ENSEMBLE, BLOB, SCALABL };
enum class Covariance { Diagonal, FullRank };

std::string to_string(Variant v);
std::string to_string(Covariance c);
/// Case-insensitive; throws ConfigError listing the valid names.
Variant parse_variant(const std::string& name);
Covariance parse_covariance(const std::string& name);

/// Which adaptation method a model is trained with, plus its knobs.
struct MethodSpec {
  Variant variant = Variant::SCALABL;
  Covariance covariance = Covariance::Diagonal;
  bool freeze_A = false;
  std::size_t rank = 4;
  double rho = 0.02;            // variance-init scale
  double dropout_rate = 0.1;    // MC_DROPOUT only
  std::size_t ensemble_size = 3;

  void validate() const;
  bool operator==(const MethodSpec&) const = default;
};

bool is_variational(Variant v);
/// True when a forward pass needs a noise draw (variational or dropout).
bool is_stochastic(Variant v);

/// Shape of one adapted linear map W0 in R^{out x in}.
struct LayerDims {
  std::size_t out_dim;  // n
  std::size_t in_dim;   // d
};

/// Rank actually used at a layer: min(r, n, d).
std::size_t effective_rank(std::size_t rank, const LayerDims& dims);

/// Parameters a plain LoRA adapter trains at each layer, r (n + d), summed.
std::size_t count_lora_params(std::size_t rank, std::span<const LayerDims> layers);
/// Trainable parameters a method adds on top of plain LoRA.
std::size_t count_additional_params(const MethodSpec& spec, std::span<const LayerDims> layers);
/// Dimensions drawn per posterior sample: r per layer for the subspace
/// posterior, r*d per layer when the whole of A is random.
std::size_t sampled_dims_per_draw(const MethodSpec& spec, std::span<const LayerDims> layers);

// ---------------------------------------------------------------------------
// Parameter sets as plain values.

struct LoraParams {
  Tensor a;  // r x d
  Tensor b;  // n x r

  std::size_t rank() const { return a.rows(); }
  std::size_t in_dim() const { return a.cols(); }
  std::size_t out_dim() const { return b.rows(); }
};

struct ScalaBLParams {
  LoraParams lora;
  Tensor log_s_mu;     // r
  Tensor log_s_sigma;  // r, log of the standard deviation
};

struct FullRankExtras {
  Tensor e_hat;  // r x r, orthonormalized by QR
  Tensor log_e;  // r, log eigenvalues of the covariance
};

struct BlobParams {
  Tensor a_mu;         // r x d
  Tensor log_a_sigma;  // r x d
  Tensor b;            // n x r
};

/// Singular values below this are clamped before taking the log at init.
inline constexpr double kSingularValueFloor = 1e-8;

/// x W0^T + x (B A)^T.
Tensor lora_forward(const Tensor& x, const Tensor& w0, const LoraParams& p);

/// Subspace initialization: Z ~ U(-sqrt(1/d), sqrt(1/d)) of shape r x d,
/// (_, s, V) = SVD(Z), A = V, log s_mu = log s, B = 0,
/// s_sigma ~ U(rho / sqrt(2), rho) stored as a log.
ScalaBLParams scalabl_init(std::size_t d, std::size_t n, std::size_t r, double rho,
                           RngStream& rng);

/// Reparameterized draw s_t = s_mu + s_sigma * eps, or s_mu + L eps with
/// L = chol(E diag(e) E^T) and E = Q of QR(E_hat) when extras are given.
Tensor sample_subspace(const ScalaBLParams& p, const FullRankExtras* extras, const Tensor& eps);

/// x W0^T + x (B diag(s_t) A)^T evaluated as three low-rank products.
Tensor scalabl_forward(const Tensor& x, const Tensor& w0, const ScalaBLParams& p,
                       const Tensor& s_t);

/// x W0^T + x (B (A_mu + A_sigma * eps))^T.
Tensor blob_forward(const Tensor& x, const Tensor& w0, const BlobParams& p, const Tensor& eps);

/// KL(N(mu, diag(sigma^2)) || N(0, I)); sigma is a standard deviation.
double kl_diag_gaussian(const Tensor& mu, const Tensor& sigma);
/// KL(N(mu, E diag(e) E^T) || N(0, I)).
double kl_fullrank_gaussian(const Tensor& mu, const FullRankExtras& extras);

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
Tensor dropout_mask(RngStream& rng, Shape shape, double rate);
/// LoRA forward with dropout applied to the adapter branch input.
Tensor mc_dropout_forward(const Tensor& x, const Tensor& w0, const LoraParams& p, double rate,
                          RngStream& rng);

// ---------------------------------------------------------------------------
// Graph building blocks shared by the value API and the trainable layers.
namespace graph {

/// x A^T B^T.
Var lora_delta(const Var& x, const Var& a, const Var& b);
/// ((x A^T) * s) B^T, i.e. x (B diag(s) A)^T.
Var subspace_delta(const Var& x, const Var& a, const Var& s, const Var& b);
Var diag_sample(const Var& log_mu, const Var& log_sigma, const Var& eps);
/// Lower Cholesky factor of E diag(exp(log_e)) E^T, E = Q of QR(e_hat).
Var fullrank_factor(const Var& e_hat, const Var& log_e);
Var fullrank_sample(const Var& log_mu, const Var& e_hat, const Var& log_e, const Var& eps);
/// 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma) with sigma = exp(log_sigma).
Var kl_diag(const Var& mu, const Var& log_sigma);
/// 1/2 (sum(e) + mu^T mu - r - sum(log e)) with e = exp(log_e).
Var kl_fullrank(const Var& mu, const Var& log_e);

}  // namespace graph

// ---------------------------------------------------------------------------

/// One adapted linear map. Owns the trainable adapter parameters for a
/// single method; the frozen W0 is supplied by the host at forward time.
class AdapterLayer {
 public:
  AdapterLayer(std::string name, LayerDims dims, const MethodSpec& spec, RngStream& init_rng);

  const std::string& name() const noexcept { return name_; }
  const LayerDims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return rank_; }
  const MethodSpec& spec() const noexcept { return spec_; }

  /// Noise for one forward pass with `rows` input rows. Empty for
  /// deterministic variants.
  Tensor sample_noise(RngStream& rng, std::size_t rows) const;
  /// x W0^T plus the adapter delta under `noise`.
  Var forward(Tape& tape, const Var& x, const Var& w0, const Tensor& noise);
  /// Posterior mean forward (noise set to zero / dropout off).
  Var forward_mean(Tape& tape, const Var& x, const Var& w0);
  /// KL of this layer's variational posterior against N(0, I); zero otherwise.
  Var kl(Tape& tape);

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Parameter& param(const std::string& short_name);
  const Parameter& param(const std::string& short_name) const;
  bool has_param(const std::string& short_name) const;
  /// Variational parameters are excluded from weight decay.
  static bool is_variational_param(const std::string& short_name);

  LoraParams lora_params() const;
  ScalaBLParams scalabl_params() const;
  std::optional<FullRankExtras> fullrank_extras() const;
  BlobParams blob_params() const;

 private:
  Var adapter_input(Tape& tape, const Var& x, const Tensor& noise);

  std::string name_;
  LayerDims dims_;
  MethodSpec spec_;
  std::size_t rank_;
  std::vector<Parameter> params_;
};

}  // namespace scalabl
