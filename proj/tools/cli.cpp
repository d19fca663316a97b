// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/rng.hpp"

namespace scalabl::cli {
namespace {

using nlohmann::ordered_json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// A synthetic task of the same shape as `train` but with a different class
// structure, used to pretrain the base before freezing it.
Dataset pretrain_set(const RunConfig& cfg, const HostConfig& host, const Dataset& train) {
  SynthSpec s = cfg.data.synth;
  if (cfg.data.source == DataSource::File) {
    s.kind = train.kind();
    s.num_classes = train.num_classes();
    if (s.kind == FeatureKind::Vector) s.dim = train.feature_len();
    else {
      s.seq_len = train.feature_len();
      s.vocab_size = host.transformer.vocab_size;
    }
  }
  s.delta = 0.0;
  s.task_seed = mix64(s.task_seed ^ stream_id_for("pretrain/task"));
  s.seed = mix64(s.seed ^ stream_id_for("pretrain/sample"));
  return synth_classification(s).train;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_meta(const fs::path& out, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["finished_utc"] = utc_now();
  write_text(out / "run_meta.json", j.dump(2) + "\n");
}

ordered_json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

MeanStd mean_std_from(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

const Dataset& pick_split(const Splits& s, const std::string& which) {
  return which == "ood" ? s.test_ood : s.test_id;
}

// Ranks rows for one metric; the lower method name wins ties, then row order.
std::vector<std::size_t> ranking(const std::vector<CompareRow>& rows, double (*key)(const CompareRow&),
                                 bool higher_better) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double va = key(rows[a]), vb = key(rows[b]);
    if (va != vb) return higher_better ? va > vb : va < vb;
    return rows[a].method < rows[b].method;
  });
  return idx;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Splits load_data(const DataConfig& cfg) {
  cfg.validate();
  if (cfg.source == DataSource::Synthetic) return synth_classification(cfg.synth);
  Splits s;
  s.train = load_jsonl(cfg.train_path);
  s.test_id = load_jsonl(cfg.test_path);
  s.test_ood = cfg.ood_path.empty() ? s.test_id : load_jsonl(cfg.ood_path);
  return s;
}

Run build_run(const RunConfig& cfg) {
  cfg.validate();
  Run r;
  r.data = load_data(cfg.data);
  if (r.data.train.empty()) throw ConfigError("training set is empty");
  r.host = resolve_host(cfg.model, r.data.train);
  r.model = std::make_unique<Model>(r.host, cfg.method, cfg.train.seed);
  if (r.host.pretrain_steps > 0) {
    const Dataset pre = pretrain_set(cfg, r.host, r.data.train);
    pretrain_base(*r.model, pre, r.host.pretrain_steps, r.host.pretrain_lr, cfg.train.batch_size,
                  r.host.base_seed);
  }
  return r;
}

std::string method_label(const MethodSpec& m) {
  std::string s = to_string(m.variant);
  if (m.covariance == Covariance::FullRank) s += "+full_rank";
  if (m.freeze_A) s += "+freeze_A";
  return s;
}

MethodSpec parse_method_label(const std::string& label, const MethodSpec& defaults) {
  MethodSpec m = defaults;
  m.covariance = Covariance::Diagonal;
  m.freeze_A = false;
  std::string rest = label;
  std::replace(rest.begin(), rest.end(), ':', '+');
  std::vector<std::string> parts;
  std::stringstream ss(rest);
  std::string p;
  while (std::getline(ss, p, '+')) parts.push_back(p);
  if (parts.empty() || parts.front().empty()) throw ConfigError("empty method name");
  m.variant = parse_variant(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string mod = lower(parts[i]);
    if (mod == "full_rank" || mod == "fullrank" || mod == "full") m.covariance = Covariance::FullRank;
    else if (mod == "freeze_a" || mod == "frozen_a" || mod == "random_subspace") m.freeze_A = true;
    else throw ConfigError("unknown method modifier '" + parts[i] + "'; valid: full_rank, freeze_A");
  }
  m.validate();
  return m;
}

fs::path default_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  const char* root = std::getenv(kOutRootEnv);
  const fs::path base = (root != nullptr && *root != '\0') ? fs::path(root) : fs::path("runs");
  std::string label = method_label(cfg.method);
  std::replace(label.begin(), label.end(), '+', '-');
  return base / (label + "-seed" + std::to_string(cfg.train.seed));
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out);
  write_text(out / "config.resolved", render_config(cfg));
  Run run = build_run(cfg);
  Trainer trainer(*run.model, run.data.train, cfg.train);
  TrainResult res;
  res.log = trainer.run();
  write_log_csv(res.log, (out / "train_log.csv").string());
  res.checkpoint = trainer.checkpoint();
  save_checkpoint(res.checkpoint, (out / "checkpoint.bin").string());
  write_meta(out, "train");
  return res;
}

std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const fs::path& out,
                                 const std::optional<fs::path>& checkpoint, const std::string& dataset) {
  cfg.validate();
  fs::create_directories(out);
  write_text(out / "config.resolved", render_config(cfg));
  const fs::path ckpt_path = checkpoint.value_or(out / "checkpoint.bin");
  if (!fs::exists(ckpt_path)) throw ConfigError("no checkpoint at " + ckpt_path.string() + "; run train first");

  Run run = build_run(cfg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
  if (!(ckpt.host == run.host)) {
    throw IncompatibleCheckpoint("checkpoint " + ckpt_path.string() + " was trained with a different model config");
  }
  apply_checkpoint(*run.model, ckpt);

  std::string split = dataset.empty() ? cfg.eval.split : dataset;
  Dataset external;
  const Dataset* data = nullptr;
  if (split == "id" || split == "ood") {
    data = &pick_split(run.data, split);
  } else {
    external = load_jsonl(split);
    data = &external;
  }
  const double delta =
      (split == "ood" && cfg.data.source == DataSource::Synthetic) ? cfg.data.synth.delta : 0.0;

  std::vector<EvalReport> reports;
  std::vector<double> acc, ece_v, nll_v;
  for (std::uint64_t seed : cfg.eval.seeds) {
    EvalReport r = evaluate(*run.model, *data, cfg.train.eval_samples, seed, cfg.eval.chunk_size);
    r.method = method_label(cfg.method);
    r.split = split;
    r.delta = delta;
    write_text(out / ("eval_seed" + std::to_string(seed) + ".json"), report_json(r));
    write_text(out / ("eval_seed" + std::to_string(seed) + "_bins.csv"), bins_csv(r.bins));
    acc.push_back(r.acc);
    ece_v.push_back(r.ece);
    nll_v.push_back(r.nll);
    reports.push_back(std::move(r));
  }

  std::size_t base_params = 0;
  for (const auto& p : run.model->base_parameters()) base_params += p.value.size();
  ordered_json agg;
  agg["method"] = method_label(cfg.method);
  agg["rank"] = cfg.method.rank;
  agg["split"] = split;
  agg["delta"] = delta;
  agg["n_samples"] = reports.front().n_samples;
  agg["seeds"] = cfg.eval.seeds;
  agg["params"] = reports.front().trainable_param_count;
  agg["additional_params"] = reports.front().additional_param_count;
  agg["base_params"] = base_params;
  agg["acc"] = mean_std_json(mean_std(acc));
  agg["ece"] = mean_std_json(mean_std(ece_v));
  agg["nll"] = mean_std_json(mean_std(nll_v));
  ordered_json data_kv;
  for (const auto& [k, v] : to_kv(cfg.data)) data_kv[k] = v;
  if (split != "id" && split != "ood") data_kv["eval_path"] = split;
  agg["data"] = std::move(data_kv);
  write_text(out / "aggregate.json", agg.dump(2) + "\n");
  write_meta(out, "eval");
  return reports;
}

std::vector<CompareRow> collect_runs(const std::vector<fs::path>& runs) {
  std::vector<CompareRow> rows;
  nlohmann::json first_data;
  fs::path first_dir;
  for (const fs::path& dir : runs) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(dir / "aggregate.json"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed " + (dir / "aggregate.json").string() + ": " + e.what());
    }
    const nlohmann::json data = j.value("data", nlohmann::json::object());
    if (rows.empty()) {
      first_data = data;
      first_dir = dir;
    } else if (data != first_data) {
      throw ConfigError("mismatched dataset specs across runs: " + first_dir.string() + " vs " + dir.string());
    }
    CompareRow r;
    try {
      r.method = j.at("method").get<std::string>();
      r.params = j.at("params").get<std::size_t>();
      r.additional_params = j.at("additional_params").get<std::size_t>();
      r.acc = mean_std_from(j.at("acc"));
      r.ece = mean_std_from(j.at("ece"));
      r.nll = mean_std_from(j.at("nll"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed " + (dir / "aggregate.json").string() + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out =
      "method,params,params_m,additional_params,acc_mean,acc_std,ece_mean,ece_std,nll_mean,nll_std\n";
  char buf[512];
  for (const CompareRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.method.c_str(),
                  r.params, fixed(static_cast<double>(r.params) / 1e6, 3).c_str(), r.additional_params,
                  r.acc.mean, r.acc.std, r.ece.mean, r.ece.std, r.nll.mean, r.nll.std);
    out += buf;
  }
  return out;
}

std::string compare_text(const std::vector<CompareRow>& rows) {
  const std::size_t n = rows.size();
  // flag[metric][row]: 1 best, 2 second best
  std::vector<std::vector<int>> flag(3, std::vector<int>(n, 0));
  const auto mark = [&](int metric, const std::vector<std::size_t>& order) {
    if (order.size() > 0) flag[metric][order[0]] = 1;
    if (order.size() > 1) flag[metric][order[1]] = 2;
  };
  mark(0, ranking(rows, [](const CompareRow& r) { return r.acc.mean; }, true));
  mark(1, ranking(rows, [](const CompareRow& r) { return r.ece.mean; }, false));
  mark(2, ranking(rows, [](const CompareRow& r) { return r.nll.mean; }, false));

  const auto cell = [](const MeanStd& m, int f) {
    std::string s = fixed(m.mean, 4) + " ± " + fixed(m.std, 4);
    if (f == 1) return "**" + s + "**";
    if (f == 2) return "_" + s + "_";
    return s;
  };
  std::vector<std::vector<std::string>> table;
  table.push_back({"Method", "Params(M)", "ACC", "ECE", "NLL"});
  for (std::size_t i = 0; i < n; ++i) {
    const CompareRow& r = rows[i];
    table.push_back({r.method, fixed(static_cast<double>(r.params) / 1e6, 3), cell(r.acc, flag[0][i]),
                     cell(r.ece, flag[1][i]), cell(r.nll, flag[2][i])});
  }
  // Display width counts code points so "±" aligns.
  const auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s)
      if ((c & 0xC0) != 0x80) ++w;
    return w;
  };
  std::vector<std::size_t> col(table.front().size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) col[c] = std::max(col[c], width(row[c]));
  std::string out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      const std::string& s = table[r][c];
      const std::string pad(col[c] - width(s), ' ');
      out += c == 0 ? s + pad : "  " + pad + s;
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = col[0];
      for (std::size_t c = 1; c < col.size(); ++c) total += 2 + col[c];
      out += std::string(total, '-') + '\n';
    }
  }
  out += "\n**x** best, _x_ second best per column (ties: lower method name first)\n";
  return out;
}

std::vector<CompareRow> cmd_compare(const RunConfig& cfg, const fs::path& out,
                                    const std::vector<std::string>& methods,
                                    const std::vector<fs::path>& runs) {
  fs::create_directories(out);
  write_text(out / "config.resolved", render_config(cfg));
  std::vector<fs::path> dirs = runs;
  if (dirs.empty()) {
    if (methods.size() < 2) throw ConfigError("compare needs at least 2 methods (--methods a,b,...)");
    for (const std::string& label : methods) {
      RunConfig sub = cfg;
      sub.method = parse_method_label(label, cfg.method);
      std::string name = method_label(sub.method);
      std::replace(name.begin(), name.end(), '+', '-');
      const fs::path dir = out / name;
      cmd_train(sub, dir);
      cmd_eval(sub, dir);
      dirs.push_back(dir);
    }
  } else if (dirs.size() < 2) {
    throw ConfigError("compare needs at least 2 runs");
  }
  std::vector<CompareRow> rows = collect_runs(dirs);
  write_text(out / "compare.csv", compare_csv(rows));
  write_text(out / "compare.txt", compare_text(rows));
  return rows;
}

void cmd_sweep(const RunConfig& cfg, const fs::path& out, const std::string& kind,
               const std::vector<std::string>& methods) {
  cfg.validate();
  fs::create_directories(out);
  if (kind == "samples") {
    if (cfg.sweep.samples.empty()) throw ConfigError("sweep.samples grid is empty");
    if (!fs::exists(out / "checkpoint.bin")) cmd_train(cfg, out);
    write_text(out / "config.resolved", render_config(cfg));
    Run run = build_run(cfg);
    const Checkpoint ckpt = load_checkpoint((out / "checkpoint.bin").string());
    if (!(ckpt.host == run.host)) {
      throw IncompatibleCheckpoint("checkpoint in " + out.string() + " was trained with a different model config");
    }
    apply_checkpoint(*run.model, ckpt);
    const auto rows = sweep_samples(*run.model, pick_split(run.data, cfg.eval.split), cfg.sweep.samples,
                                    cfg.sweep.repeats, cfg.eval.seeds.front(), cfg.eval.chunk_size);
    write_text(out / "sweep_samples.csv", sweep_csv(rows));
    return;
  }
  if (kind != "rank") throw ConfigError("unknown sweep kind '" + kind + "'; valid: samples, rank");
  if (cfg.sweep.ranks.empty()) throw ConfigError("sweep.ranks grid is empty");
  for (std::size_t r : cfg.sweep.ranks)
    if (r == 0) throw ConfigError("sweep.ranks values must be positive");
  write_text(out / "config.resolved", render_config(cfg));
  std::vector<std::string> labels = methods;
  if (labels.empty()) labels.push_back(method_label(cfg.method));
  std::string csv =
      "method,rank,additional_params,trainable_params,total_params,acc_mean,acc_std,ece_mean,ece_std,"
      "nll_mean,nll_std\n";
  char buf[512];
  for (const std::string& label : labels) {
    for (std::size_t r : cfg.sweep.ranks) {
      RunConfig sub = cfg;
      sub.method = parse_method_label(label, cfg.method);
      sub.method.rank = r;
      std::string name = method_label(sub.method);
      std::replace(name.begin(), name.end(), '+', '-');
      const fs::path dir = out / (name + "-r" + std::to_string(r));
      cmd_train(sub, dir);
      cmd_eval(sub, dir);
      const auto j = nlohmann::json::parse(read_text(dir / "aggregate.json"));
      const std::size_t trainable = j.at("params").get<std::size_t>();
      const MeanStd acc = mean_std_from(j.at("acc")), e = mean_std_from(j.at("ece")),
                    l = mean_std_from(j.at("nll"));
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    method_label(sub.method).c_str(), r, j.at("additional_params").get<std::size_t>(),
                    trainable, trainable + j.at("base_params").get<std::size_t>(), acc.mean, acc.std,
                    e.mean, e.std, l.mean, l.std);
      csv += buf;
    }
  }
  write_text(out / "sweep_rank.csv", csv);
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"scalabl: Bayesian low-rank adapters on desk-scale models"};
  app.name("scalabl");
  app.require_subcommand(1);

  struct Opts {
    std::string config, out, method, rank, samples, dataset, checkpoint, methods, eval_seeds, kind;
    std::optional<std::uint64_t> seed;
    std::optional<double> delta;
    std::vector<std::string> sets, runs;
  } o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file ([section] key = value)");
    sub->add_option("--seed", o.seed, "Training seed");
    sub->add_option("--out", o.out, std::string("Output directory (default: $") + kOutRootEnv + "/<method>-seed<k>)");
    sub->add_option("--method", o.method, "mle, map, mc_dropout, ensemble, blob, scalabl[+full_rank][+freeze_A]");
    sub->add_option("--rank", o.rank, "LoRA rank (sweep rank: comma-separated grid)");
    sub->add_option("--samples", o.samples, "Posterior samples N (sweep samples: comma-separated grid)");
    sub->add_option("--dataset", o.dataset,
                    "train/compare/sweep: 'synthetic' or a directory with train.jsonl and test.jsonl; "
                    "eval: id, ood or a JSONL file");
    sub->add_option("--delta", o.delta, "Distribution shift of the synthetic OOD split");
    sub->add_option("--set", o.sets, "Override: section.key=value (repeatable)");
    sub->allow_extras();
  };
  CLI::App* train = app.add_subcommand("train", "Train one method and write checkpoint.bin and train_log.csv");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint over eval seeds");
  CLI::App* compare = app.add_subcommand("compare", "Train, evaluate and tabulate several methods");
  CLI::App* sweep = app.add_subcommand("sweep", "Sample-count or rank sweep");
  for (CLI::App* sub : {train, eval, compare, sweep}) add_common(sub);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: <out>/checkpoint.bin)");
  eval->add_option("--eval-seeds", o.eval_seeds, "Comma-separated evaluation seeds");
  compare->add_option("--methods", o.methods, "Comma-separated method labels");
  compare->add_option("--runs", o.runs, "Existing run directories to tabulate")->expected(0, -1);
  sweep->add_option("kind", o.kind, "samples or rank")->required();
  sweep->add_option("--methods", o.methods, "Comma-separated method labels (rank sweep)");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUserError;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    for (const std::string& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    const auto extras = sub->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
      std::string a = extras[i];
      if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
      a = a.substr(2);
      const auto eq = a.find('=');
      if (eq != std::string::npos) {
        apply_override(cfg, a.substr(0, eq), a.substr(eq + 1));
      } else if (i + 1 < extras.size()) {
        apply_override(cfg, a, extras[++i]);
      } else {
        throw ConfigError("override --" + a + " needs a value");
      }
    }
    const bool is_sweep = sub == sweep;
    if (!o.method.empty()) cfg.method = parse_method_label(o.method, cfg.method);
    if (o.seed) cfg.train.seed = *o.seed;
    if (!o.rank.empty()) {
      if (is_sweep && o.kind == "rank") set_kv(cfg.sweep, "ranks", o.rank);
      else set_kv(cfg.method, "rank", o.rank);
    }
    if (!o.samples.empty()) {
      if (is_sweep && o.kind == "samples") set_kv(cfg.sweep, "samples", o.samples);
      else set_kv(cfg.train, "eval_samples", o.samples);
    }
    if (o.delta) cfg.data.synth.delta = *o.delta;
    if (!o.eval_seeds.empty()) set_kv(cfg.eval, "seeds", o.eval_seeds);
    std::string eval_dataset;
    if (!o.dataset.empty()) {
      if (sub == eval) {
        eval_dataset = o.dataset;
      } else if (o.dataset == "synthetic") {
        cfg.data.source = DataSource::Synthetic;
      } else {
        const fs::path d(o.dataset);
        cfg.data.source = DataSource::File;
        cfg.data.train_path = (d / "train.jsonl").string();
        cfg.data.test_path = (d / "test.jsonl").string();
        cfg.data.ood_path = fs::exists(d / "ood.jsonl") ? (d / "ood.jsonl").string() : std::string{};
      }
    }
    if (!o.out.empty()) cfg.out_dir = o.out;
    const fs::path dir = default_out_dir(cfg);
    cfg.out_dir = dir.string();
    cfg.validate();

    if (sub == train) {
      const TrainResult r = cmd_train(cfg, dir);
      const LogRow* last = r.log.empty() ? nullptr : &r.log.back();
      out << "trained " << method_label(cfg.method) << " for " << r.checkpoint.step << " steps";
      if (last != nullptr) out << "; final loss " << last->loss;
      out << "\nwrote " << (dir / "checkpoint.bin").string() << "\n";
    } else if (sub == eval) {
      const auto reports =
          cmd_eval(cfg, dir, o.checkpoint.empty() ? std::nullopt : std::optional<fs::path>(o.checkpoint),
                   eval_dataset);
      for (const EvalReport& r : reports) {
        out << "seed " << r.seed << ": acc " << fixed(r.acc, 4) << "  ece " << fixed(r.ece, 4) << "  nll "
            << fixed(r.nll, 4) << "\n";
      }
      out << "wrote " << (dir / "aggregate.json").string() << "\n";
    } else if (sub == compare) {
      std::vector<fs::path> runs(o.runs.begin(), o.runs.end());
      cmd_compare(cfg, dir, split_list(o.methods), runs);
      out << read_text(dir / "compare.txt");
    } else {
      cmd_sweep(cfg, dir, o.kind, split_list(o.methods));
      out << "wrote " << (dir / ("sweep_" + o.kind + ".csv")).string() << "\n";
    }
    return kOk;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUserError;
  }
}

}  // namespace scalabl::cli
