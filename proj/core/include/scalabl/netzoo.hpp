// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scalabl/adapters.hpp"
#include "scalabl/autodiff.hpp"
#include "scalabl/datakit.hpp"

namespace scalabl {

enum class HostKind { Mlp, Transformer };

std::string to_string(HostKind k);
HostKind parse_host_kind(const std::string& s);

struct TinyTransformerConfig {
  std::size_t vocab_size = 128;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 32;
  std::size_t ffn_dim = 64;
  int num_classes = 4;

  void validate() const;
  /// Query and value of every block, plus the output head.
  std::size_t adapted_layer_count() const { return 2 * num_layers + 1; }
  bool operator==(const TinyTransformerConfig&) const = default;
};

struct MlpConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {32, 32};
  int num_classes = 4;

  void validate() const;
  std::size_t adapted_layer_count() const { return hidden.size() + 1; }
  bool operator==(const MlpConfig&) const = default;
};

struct HostConfig {
  HostKind kind = HostKind::Transformer;
  TinyTransformerConfig transformer;
  MlpConfig mlp;
  std::uint64_t base_seed = 1234;
  // Optional short pretraining of the base on a disjoint synthetic task
  // before it is frozen.
  std::size_t pretrain_steps = 0;
  double pretrain_lr = 3e-3;

  void validate() const;
  int num_classes() const;
  bool operator==(const HostConfig&) const = default;
};

/// Per adapted layer noise for one forward pass (index-aligned with the
/// model's adapter list). Empty for deterministic variants.
using NoiseBundle = std::vector<Tensor>;

/// A frozen host network with adapters attached. ENSEMBLE models carry one
/// independent adapter set per member over a shared frozen base.
class Model {
 public:
  /// Base weights come from `host.base_seed`; member i's adapters from
  /// `adapter_seed + i`.
  Model(const HostConfig& host, const MethodSpec& spec, std::uint64_t adapter_seed);

  const HostConfig& host() const noexcept { return host_; }
  const MethodSpec& spec() const noexcept { return spec_; }
  std::size_t num_members() const noexcept { return members_.size(); }
  int num_classes() const { return host_.num_classes(); }

  std::vector<AdapterLayer>& adapters(std::size_t member = 0) { return members_.at(member); }
  const std::vector<AdapterLayer>& adapters(std::size_t member = 0) const { return members_.at(member); }
  std::vector<LayerDims> adapted_layer_dims() const;

  /// Draws one noise bundle sized for `inputs` (dropout masks are per row;
  /// variational noise is one draw per layer).
  NoiseBundle sample_noise(RngStream& rng, const Inputs& inputs) const;
  /// Class logits [count x C]. The same weight sample is shared by the whole batch.
  Var forward(Tape& tape, const Inputs& inputs, const NoiseBundle& noise, std::size_t member = 0);
  /// Logits with every adapter at its posterior mean (dropout off).
  Var forward_mean(Tape& tape, const Inputs& inputs, std::size_t member = 0);
  /// Logits of the frozen base alone, ignoring adapters.
  Var forward_base(Tape& tape, const Inputs& inputs);
  /// Sum of per-layer KL terms for `member`.
  Var kl(Tape& tape, std::size_t member = 0);

  /// Convenience: logits without keeping a tape.
  Tensor logits(const Inputs& inputs, const NoiseBundle& noise, std::size_t member = 0);

  std::vector<Parameter*> adapter_parameters(std::size_t member);
  std::vector<Parameter*> adapter_parameters();
  std::vector<Parameter*> trainable_parameters();
  std::size_t trainable_count() const;
  std::vector<Parameter>& base_parameters() noexcept { return base_; }
  const std::vector<Parameter>& base_parameters() const noexcept { return base_; }
  /// Makes every base weight trainable (pretraining) or frozen again.
  void set_base_trainable(bool trainable);
  /// Digest of every frozen base weight, bit-exact.
  std::uint64_t base_fingerprint() const;

 private:
  Parameter& base(const std::string& name);
  std::size_t input_rows(std::size_t layer, const Inputs& inputs) const;
  Var run(Tape& tape, const Inputs& inputs, const NoiseBundle* noise, std::size_t member,
          bool mean, bool base_only);

  HostConfig host_;
  MethodSpec spec_;
  std::vector<Parameter> base_;
  std::vector<std::size_t> adapted_base_;  // base_ index of W0 per adapted layer
  std::vector<std::vector<AdapterLayer>> members_;
};

/// build_model: a Model from host + method, with adapter init drawn from `adapter_seed`.
Model build_model(const HostConfig& host, const MethodSpec& spec, std::uint64_t adapter_seed);

}  // namespace scalabl
