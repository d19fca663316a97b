// SPDX-License-Identifier: Apache-2.0
#include "scalabl/netzoo.hpp"

#include <cmath>
#include <cstring>

#include "scalabl/errors.hpp"
#include "scalabl/ops.hpp"

namespace scalabl {

std::string to_string(HostKind k) { return k == HostKind::Mlp ? "mlp" : "transformer"; }

HostKind parse_host_kind(const std::string& s) {
  if (s == "mlp") return HostKind::Mlp;
  if (s == "transformer") return HostKind::Transformer;
  throw ConfigError("unknown host '" + s + "'; valid: mlp, transformer");
}

void TinyTransformerConfig::validate() const {
  if (vocab_size < 2 || embed_dim == 0 || num_layers == 0 || num_heads == 0 ||
      max_seq_len == 0 || ffn_dim == 0) {
    throw ConfigError("transformer dimensions must be positive");
  }
  if (embed_dim % num_heads != 0) throw ConfigError("embed_dim must be divisible by num_heads");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

void MlpConfig::validate() const {
  if (input_dim == 0) throw ConfigError("mlp input_dim must be positive");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("mlp hidden sizes must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

void HostConfig::validate() const {
  if (kind == HostKind::Transformer) transformer.validate();
  else mlp.validate();
}

int HostConfig::num_classes() const {
  return kind == HostKind::Transformer ? transformer.num_classes : mlp.num_classes;
}

namespace {

Tensor gaussian(RngStream& rng, Shape shape, double std) {
  Tensor t = standard_normal(rng, std::move(shape));
  for (double& v : t.data()) v *= std;
  return t;
}

}  // namespace

Model::Model(const HostConfig& host, const MethodSpec& spec, std::uint64_t adapter_seed)
    : host_(host), spec_(spec) {
  host_.validate();
  spec_.validate();
  RngStream rng(host_.base_seed, stream_id_for("netzoo/base"));
  auto add_base = [&](std::string name, Shape shape, double std) {
    base_.emplace_back(std::move(name), gaussian(rng, std::move(shape), std), false);
    return base_.size() - 1;
  };
  std::vector<std::pair<std::string, LayerDims>> attach;
  if (host_.kind == HostKind::Transformer) {
    const auto& c = host_.transformer;
    const std::size_t d = c.embed_dim;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    add_base("tok_emb", {c.vocab_size, d}, 1.0);
    add_base("pos_emb", {c.max_seq_len, d}, 1.0);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      const std::string blk = "block" + std::to_string(l) + ".";
      adapted_base_.push_back(add_base(blk + "wq", {d, d}, s));
      attach.emplace_back(blk + "query", LayerDims{d, d});
      add_base(blk + "wk", {d, d}, s);
      adapted_base_.push_back(add_base(blk + "wv", {d, d}, s));
      attach.emplace_back(blk + "value", LayerDims{d, d});
      add_base(blk + "wo", {d, d}, s);
      add_base(blk + "ffn1", {c.ffn_dim, d}, s);
      add_base(blk + "ffn2", {d, c.ffn_dim}, 1.0 / std::sqrt(static_cast<double>(c.ffn_dim)));
    }
    const auto classes = static_cast<std::size_t>(c.num_classes);
    adapted_base_.push_back(add_base("head", {classes, d}, s));
    attach.emplace_back("head", LayerDims{classes, d});
  } else {
    const auto& c = host_.mlp;
    std::size_t in = c.input_dim;
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
      const std::string name = "hidden" + std::to_string(i);
      adapted_base_.push_back(add_base(name, {c.hidden[i], in}, std::sqrt(2.0 / static_cast<double>(in))));
      attach.emplace_back(name, LayerDims{c.hidden[i], in});
      in = c.hidden[i];
    }
    const auto classes = static_cast<std::size_t>(c.num_classes);
    adapted_base_.push_back(add_base("head", {classes, in}, 1.0 / std::sqrt(static_cast<double>(in))));
    attach.emplace_back("head", LayerDims{classes, in});
  }

  const std::size_t members = spec_.variant == Variant::ENSEMBLE ? spec_.ensemble_size : 1;
  for (std::size_t m = 0; m < members; ++m) {
    RngStream init(adapter_seed + m, stream_id_for("netzoo/adapter-init"));
    std::vector<AdapterLayer> layers;
    layers.reserve(attach.size());
    for (std::size_t i = 0; i < attach.size(); ++i) {
      RngStream layer_rng = init.split(i);
      const std::string prefix = members > 1 ? "member" + std::to_string(m) + "." : "";
      layers.emplace_back(prefix + attach[i].first, attach[i].second, spec_, layer_rng);
    }
    members_.push_back(std::move(layers));
  }
}

Model build_model(const HostConfig& host, const MethodSpec& spec, std::uint64_t adapter_seed) {
  return Model(host, spec, adapter_seed);
}

std::vector<LayerDims> Model::adapted_layer_dims() const {
  std::vector<LayerDims> out;
  for (const auto& a : members_.front()) out.push_back(a.dims());
  return out;
}

Parameter& Model::base(const std::string& name) {
  for (auto& p : base_)
    if (p.name == name) return p;
  throw std::out_of_range("no base weight '" + name + "'");
}

std::size_t Model::input_rows(std::size_t layer, const Inputs& inputs) const {
  if (host_.kind == HostKind::Transformer && layer + 1 < members_.front().size()) {
    return inputs.count * inputs.seq_len;
  }
  return inputs.count;
}

NoiseBundle Model::sample_noise(RngStream& rng, const Inputs& inputs) const {
  NoiseBundle bundle;
  if (!is_stochastic(spec_.variant)) return bundle;
  const auto& layers = members_.front();
  bundle.reserve(layers.size());
  // Successive bundles from one stream differ through the drawn tag.
  const RngStream draw = rng.split(rng.next_u64());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    RngStream layer_rng = draw.split(i);
    bundle.push_back(layers[i].sample_noise(layer_rng, input_rows(i, inputs)));
  }
  return bundle;
}

Var Model::run(Tape& tape, const Inputs& inputs, const NoiseBundle* noise, std::size_t member,
               bool mean, bool base_only) {
  auto& layers = members_.at(member);
  if (!base_only && !mean && is_stochastic(spec_.variant)) {
    if (noise == nullptr || noise->size() != layers.size()) {
      throw ShapeError("variant " + to_string(spec_.variant) + " needs one noise tensor per adapted layer (" +
                       std::to_string(layers.size()) + "), got " +
                       std::to_string(noise ? noise->size() : 0));
    }
  }
  static const Tensor kNoNoise;
  auto adapted = [&](std::size_t i, const Var& x) {
    const Var w0 = tape.param(base_[adapted_base_[i]]);
    if (base_only) return ad::matmul_nt(x, w0);
    if (mean) return layers[i].forward_mean(tape, x, w0);
    const bool has = noise != nullptr && i < noise->size();
    return layers[i].forward(tape, x, w0, has ? (*noise)[i] : kNoNoise);
  };

  if (host_.kind == HostKind::Mlp) {
    if (inputs.kind != FeatureKind::Vector || inputs.dense.cols() != host_.mlp.input_dim) {
      throw ShapeError("mlp host expects dense vectors of dim " + std::to_string(host_.mlp.input_dim));
    }
    Var h = tape.constant(inputs.dense);
    for (std::size_t i = 0; i < host_.mlp.hidden.size(); ++i) h = ad::relu(adapted(i, h));
    return adapted(host_.mlp.hidden.size(), h);
  }

  const auto& c = host_.transformer;
  if (inputs.kind != FeatureKind::Tokens) throw ShapeError("transformer host expects token inputs");
  const std::size_t T = inputs.seq_len;
  if (T == 0 || T > c.max_seq_len) {
    throw ShapeError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                     std::to_string(c.max_seq_len));
  }
  std::vector<int> pos(inputs.tokens.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i % T);
  Var h = ad::add(ad::gather_rows(tape.param(base("tok_emb")), inputs.tokens),
                  ad::gather_rows(tape.param(base("pos_emb")), pos));
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string blk = "block" + std::to_string(l) + ".";
    const Var a = ad::layer_norm_rows(h);
    const Var q = adapted(2 * l, a);
    const Var k = ad::matmul_nt(a, tape.param(base(blk + "wk")));
    const Var v = adapted(2 * l + 1, a);
    const Var att = ad::attention(q, k, v, T, c.num_heads);
    h = ad::add(h, ad::matmul_nt(att, tape.param(base(blk + "wo"))));
    const Var f = ad::relu(ad::matmul_nt(ad::layer_norm_rows(h), tape.param(base(blk + "ffn1"))));
    h = ad::add(h, ad::matmul_nt(f, tape.param(base(blk + "ffn2"))));
  }
  const Var pooled = ad::mean_pool(ad::layer_norm_rows(h), T);
  return adapted(2 * c.num_layers, pooled);
}

Var Model::forward(Tape& tape, const Inputs& inputs, const NoiseBundle& noise, std::size_t member) {
  return run(tape, inputs, &noise, member, false, false);
}

Var Model::forward_mean(Tape& tape, const Inputs& inputs, std::size_t member) {
  return run(tape, inputs, nullptr, member, true, false);
}

Var Model::forward_base(Tape& tape, const Inputs& inputs) {
  return run(tape, inputs, nullptr, 0, false, true);
}

Var Model::kl(Tape& tape, std::size_t member) {
  auto& layers = members_.at(member);
  Var total = tape.constant(Tensor::scalar(0.0));
  if (!is_variational(spec_.variant)) return total;
  for (auto& layer : layers) total = ad::add(total, layer.kl(tape));
  return total;
}

Tensor Model::logits(const Inputs& inputs, const NoiseBundle& noise, std::size_t member) {
  Tape tape;
  return forward(tape, inputs, noise, member).value();
}

std::vector<Parameter*> Model::adapter_parameters(std::size_t member) {
  std::vector<Parameter*> out;
  for (auto& layer : members_.at(member))
    for (auto& p : layer.parameters()) out.push_back(&p);
  return out;
}

std::vector<Parameter*> Model::adapter_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t m = 0; m < members_.size(); ++m) {
    auto part = adapter_parameters(m);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out;
  for (auto& p : base_)
    if (p.trainable) out.push_back(&p);
  for (Parameter* p : adapter_parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

std::size_t Model::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : base_)
    if (p.trainable) n += p.value.size();
  for (const auto& layers : members_)
    for (const auto& layer : layers)
      for (const auto& p : layer.parameters())
        if (p.trainable) n += p.value.size();
  return n;
}

void Model::set_base_trainable(bool trainable) {
  for (auto& p : base_) {
    p.trainable = trainable;
    p.zero_grad();
  }
}

std::uint64_t Model::base_fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& p : base_) {
    feed(p.name.data(), p.name.size());
    feed(p.value.data().data(), p.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace scalabl
