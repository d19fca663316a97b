// SPDX-License-Identifier: Apache-2.0
#include "scalabl/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "scalabl/errors.hpp"

namespace scalabl {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const std::string v = trim(value);
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, value, "a non-negative integer");
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  const std::string v = trim(value);
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, value, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  const std::string v = trim(value);
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(trim(value));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(static_cast<T>(parse_u64(key, item)));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string u(std::uint64_t v) { return std::to_string(v); }
std::string b(bool v) { return v ? "true" : "false"; }

[[noreturn]] void unknown_key(const char* section, const std::string& key) {
  throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
}

const std::vector<std::string>& section_names() {
  static const std::vector<std::string> names = {"method", "train", "model", "data",
                                                 "eval",   "sweep", "output"};
  return names;
}

void set_section(RunConfig& cfg, const std::string& section, const std::string& key,
                 const std::string& value) {
  if (section == "method") return set_kv(cfg.method, key, value);
  if (section == "train") return set_kv(cfg.train, key, value);
  if (section == "model") return set_kv(cfg.model, key, value);
  if (section == "data") return set_kv(cfg.data, key, value);
  if (section == "eval") return set_kv(cfg.eval, key, value);
  if (section == "sweep") return set_kv(cfg.sweep, key, value);
  if (section == "output") {
    if (key == "dir") {
      cfg.out_dir = trim(value);
      return;
    }
    unknown_key("output", key);
  }
  throw ConfigError("unknown config section [" + section + "]");
}

KeyValues section_kv(const RunConfig& cfg, const std::string& section) {
  if (section == "method") return to_kv(cfg.method);
  if (section == "train") return to_kv(cfg.train);
  if (section == "model") return to_kv(cfg.model);
  if (section == "data") return to_kv(cfg.data);
  if (section == "eval") return to_kv(cfg.eval);
  if (section == "sweep") return to_kv(cfg.sweep);
  return {{"dir", cfg.out_dir}};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

// --- method ---------------------------------------------------------------

KeyValues to_kv(const MethodSpec& m) {
  return {{"variant", to_string(m.variant)},
          {"covariance", to_string(m.covariance)},
          {"freeze_A", b(m.freeze_A)},
          {"rank", u(m.rank)},
          {"rho", format_double(m.rho)},
          {"dropout_rate", format_double(m.dropout_rate)},
          {"ensemble_size", u(m.ensemble_size)}};
}

void set_kv(MethodSpec& m, const std::string& key, const std::string& value) {
  if (key == "variant" || key == "name") m.variant = parse_variant(trim(value));
  else if (key == "covariance") m.covariance = parse_covariance(trim(value));
  else if (key == "freeze_A" || key == "freeze_a") m.freeze_A = parse_bool(key, value);
  else if (key == "rank") m.rank = parse_u64(key, value);
  else if (key == "rho") m.rho = parse_double(key, value);
  else if (key == "dropout_rate") m.dropout_rate = parse_double(key, value);
  else if (key == "ensemble_size") m.ensemble_size = parse_u64(key, value);
  else unknown_key("method", key);
}

// --- train ----------------------------------------------------------------

KeyValues to_kv(const TrainConfig& t) {
  return {{"steps", u(t.steps)},
          {"batch_size", u(t.batch_size)},
          {"learning_rate", format_double(t.learning_rate)},
          {"beta_max", format_double(t.beta_max)},
          {"beta_schedule", to_string(t.beta_schedule)},
          {"warmup_fraction", format_double(t.warmup_fraction)},
          {"weight_decay", format_double(t.weight_decay)},
          {"seed", u(t.seed)},
          {"eval_samples", u(t.eval_samples)},
          {"grad_clip", format_double(t.grad_clip)}};
}

void set_kv(TrainConfig& t, const std::string& key, const std::string& value) {
  if (key == "steps") t.steps = parse_u64(key, value);
  else if (key == "batch_size") t.batch_size = parse_u64(key, value);
  else if (key == "learning_rate" || key == "lr") t.learning_rate = parse_double(key, value);
  else if (key == "beta_max") t.beta_max = parse_double(key, value);
  else if (key == "beta_schedule") t.beta_schedule = parse_beta_schedule(trim(value));
  else if (key == "warmup_fraction") t.warmup_fraction = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "eval_samples") t.eval_samples = parse_u64(key, value);
  else if (key == "grad_clip") t.grad_clip = parse_double(key, value);
  else unknown_key("train", key);
}

// --- model ----------------------------------------------------------------

KeyValues to_kv(const HostConfig& h) {
  return {{"kind", to_string(h.kind)},
          {"base_seed", u(h.base_seed)},
          {"pretrain_steps", u(h.pretrain_steps)},
          {"pretrain_lr", format_double(h.pretrain_lr)},
          {"transformer.vocab_size", u(h.transformer.vocab_size)},
          {"transformer.embed_dim", u(h.transformer.embed_dim)},
          {"transformer.num_layers", u(h.transformer.num_layers)},
          {"transformer.num_heads", u(h.transformer.num_heads)},
          {"transformer.max_seq_len", u(h.transformer.max_seq_len)},
          {"transformer.ffn_dim", u(h.transformer.ffn_dim)},
          {"transformer.num_classes", std::to_string(h.transformer.num_classes)},
          {"mlp.input_dim", u(h.mlp.input_dim)},
          {"mlp.hidden", join(h.mlp.hidden)},
          {"mlp.num_classes", std::to_string(h.mlp.num_classes)}};
}

void set_kv(HostConfig& h, const std::string& key, const std::string& value) {
  if (key == "kind" || key == "host") h.kind = parse_host_kind(trim(value));
  else if (key == "base_seed") h.base_seed = parse_u64(key, value);
  else if (key == "pretrain_steps") h.pretrain_steps = parse_u64(key, value);
  else if (key == "pretrain_lr") h.pretrain_lr = parse_double(key, value);
  else if (key == "transformer.vocab_size") h.transformer.vocab_size = parse_u64(key, value);
  else if (key == "transformer.embed_dim" || key == "embed_dim") h.transformer.embed_dim = parse_u64(key, value);
  else if (key == "transformer.num_layers" || key == "num_layers") h.transformer.num_layers = parse_u64(key, value);
  else if (key == "transformer.num_heads" || key == "num_heads") h.transformer.num_heads = parse_u64(key, value);
  else if (key == "transformer.max_seq_len") h.transformer.max_seq_len = parse_u64(key, value);
  else if (key == "transformer.ffn_dim" || key == "ffn_dim") h.transformer.ffn_dim = parse_u64(key, value);
  else if (key == "transformer.num_classes") h.transformer.num_classes = parse_int(key, value);
  else if (key == "mlp.input_dim") h.mlp.input_dim = parse_u64(key, value);
  else if (key == "mlp.hidden" || key == "hidden") h.mlp.hidden = parse_list<std::size_t>(key, value);
  else if (key == "mlp.num_classes") h.mlp.num_classes = parse_int(key, value);
  else unknown_key("model", key);
}

// --- data -----------------------------------------------------------------

void DataConfig::validate() const {
  if (source == DataSource::File) {
    if (train_path.empty()) throw ConfigError("data.train_path is required for source=file");
    if (test_path.empty()) throw ConfigError("data.test_path is required for source=file");
  } else {
    synth.validate();
  }
}

KeyValues to_kv(const DataConfig& d) {
  const SynthSpec& s = d.synth;
  return {{"source", d.source == DataSource::File ? "file" : "synthetic"},
          {"train_path", d.train_path},
          {"test_path", d.test_path},
          {"ood_path", d.ood_path},
          {"kind", to_string(s.kind)},
          {"num_classes", std::to_string(s.num_classes)},
          {"train_size", u(s.train_size)},
          {"test_size", u(s.test_size)},
          {"delta", format_double(s.delta)},
          {"seed", u(s.seed)},
          {"task_seed", u(s.task_seed)},
          {"dim", u(s.dim)},
          {"separation", format_double(s.separation)},
          {"vocab_size", u(s.vocab_size)},
          {"seq_len", u(s.seq_len)},
          {"keywords_per_class", u(s.keywords_per_class)},
          {"signal_prob", format_double(s.signal_prob)},
          {"confuse_prob", format_double(s.confuse_prob)},
          {"label_noise", format_double(s.label_noise)}};
}

void set_kv(DataConfig& d, const std::string& key, const std::string& value) {
  SynthSpec& s = d.synth;
  if (key == "source") {
    const std::string v = lower(trim(value));
    if (v == "file") d.source = DataSource::File;
    else if (v == "synthetic" || v == "synth") d.source = DataSource::Synthetic;
    else throw ConfigError("data.source must be 'synthetic' or 'file', got '" + value + "'");
  } else if (key == "train_path") d.train_path = trim(value);
  else if (key == "test_path") d.test_path = trim(value);
  else if (key == "ood_path") d.ood_path = trim(value);
  else if (key == "kind") s.kind = parse_feature_kind(trim(value));
  else if (key == "num_classes") s.num_classes = parse_int(key, value);
  else if (key == "train_size") s.train_size = parse_u64(key, value);
  else if (key == "test_size") s.test_size = parse_u64(key, value);
  else if (key == "delta") s.delta = parse_double(key, value);
  else if (key == "seed") s.seed = parse_u64(key, value);
  else if (key == "task_seed") s.task_seed = parse_u64(key, value);
  else if (key == "dim") s.dim = parse_u64(key, value);
  else if (key == "separation") s.separation = parse_double(key, value);
  else if (key == "vocab_size") s.vocab_size = parse_u64(key, value);
  else if (key == "seq_len") s.seq_len = parse_u64(key, value);
  else if (key == "keywords_per_class") s.keywords_per_class = parse_u64(key, value);
  else if (key == "signal_prob") s.signal_prob = parse_double(key, value);
  else if (key == "confuse_prob") s.confuse_prob = parse_double(key, value);
  else if (key == "label_noise") s.label_noise = parse_double(key, value);
  else unknown_key("data", key);
}

// --- eval / sweep ---------------------------------------------------------

void EvalConfig::validate() const {
  if (seeds.empty()) throw ConfigError("eval.seeds must list at least one seed");
  if (split != "id" && split != "ood") throw ConfigError("eval.split must be 'id' or 'ood'");
  if (chunk_size == 0) throw ConfigError("eval.chunk_size must be positive");
}

KeyValues to_kv(const EvalConfig& e) {
  return {{"seeds", join(e.seeds)}, {"split", e.split}, {"chunk_size", u(e.chunk_size)}};
}

void set_kv(EvalConfig& e, const std::string& key, const std::string& value) {
  if (key == "seeds") e.seeds = parse_list<std::uint64_t>(key, value);
  else if (key == "split") e.split = lower(trim(value));
  else if (key == "chunk_size") e.chunk_size = parse_u64(key, value);
  else unknown_key("eval", key);
}

KeyValues to_kv(const SweepConfig& s) {
  return {{"samples", join(s.samples)}, {"ranks", join(s.ranks)}, {"repeats", u(s.repeats)}};
}

void set_kv(SweepConfig& s, const std::string& key, const std::string& value) {
  if (key == "samples") s.samples = parse_list<std::size_t>(key, value);
  else if (key == "ranks") s.ranks = parse_list<std::size_t>(key, value);
  else if (key == "repeats") s.repeats = parse_u64(key, value);
  else unknown_key("sweep", key);
}

// --- run config -----------------------------------------------------------

void RunConfig::validate() const {
  method.validate();
  train.validate();
  model.validate();
  data.validate();
  eval.validate();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = lower(trim(std::string_view(t).substr(1, t.size() - 2)));
      if (std::find(section_names().begin(), section_names().end(), section) == section_names().end()) {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    try {
      if (section.empty()) apply_override(cfg, key, value);
      else set_section(cfg, section, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    const std::string section = lower(key.substr(0, dot));
    if (std::find(section_names().begin(), section_names().end(), section) != section_names().end()) {
      set_section(cfg, section, key.substr(dot + 1), value);
      return;
    }
  }
  std::vector<std::string> owners;
  for (const auto& s : section_names()) {
    for (const auto& [k, v] : section_kv(cfg, s)) {
      if (k == key) owners.push_back(s);
    }
  }
  if (owners.empty()) throw ConfigError("unknown config key '" + key + "'");
  if (owners.size() > 1) {
    std::string msg = "config key '" + key + "' is ambiguous; qualify it as";
    for (const auto& s : owners) msg += " " + s + "." + key;
    throw ConfigError(msg);
  }
  set_section(cfg, owners.front(), key, value);
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& s : section_names()) {
    if (!out.empty()) out += '\n';
    out += "[" + s + "]\n";
    for (const auto& [k, v] : section_kv(cfg, s)) out += k + " = " + v + "\n";
  }
  return out;
}

HostConfig resolve_host(const HostConfig& model, const Dataset& train) {
  HostConfig h = model;
  const int c = train.num_classes();
  h.transformer.num_classes = c;
  h.mlp.num_classes = c;
  if (train.kind() == FeatureKind::Tokens) {
    if (h.kind != HostKind::Transformer) {
      throw ConfigError("token features need model.kind = transformer");
    }
    int max_id = 0;
    for (const auto& ex : train.examples)
      for (int t : ex.tokens()) max_id = std::max(max_id, t);
    h.transformer.vocab_size = std::max<std::size_t>(h.transformer.vocab_size, max_id + 1);
    h.transformer.max_seq_len = std::max(h.transformer.max_seq_len, train.feature_len());
  } else {
    if (h.kind != HostKind::Mlp) throw ConfigError("vector features need model.kind = mlp");
    h.mlp.input_dim = train.feature_len();
  }
  h.validate();
  return h;
}

}  // namespace scalabl
