#include "hubrouter/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "hubrouter/audit.hpp"
#include "hubrouter/checkpoint.hpp"
#include "hubrouter/errors.hpp"

namespace hubrouter::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("setting '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("setting '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("setting '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError("setting '" + key + "': empty list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Setting {
  SettingDoc doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HR_SIZE(key, field, help)                                                                   \
  Setting {                                                                                         \
    {key, help}, [](RunConfig& c, const std::string& v) { c.field = parse_u64(key, v); },           \
        [](const RunConfig& c) { return std::to_string(c.field); }                                  \
  }
#define HR_DOUBLE(key, field, help)                                                                 \
  Setting {                                                                                         \
    {key, help}, [](RunConfig& c, const std::string& v) { c.field = parse_double(key, v); },        \
        [](const RunConfig& c) { return fmt(c.field); }                                             \
  }
#define HR_BOOL(key, field, help)                                                                   \
  Setting {                                                                                         \
    {key, help}, [](RunConfig& c, const std::string& v) { c.field = parse_bool(key, v); },          \
        [](const RunConfig& c) { return fmt_bool(c.field); }                                        \
  }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      Setting{{"subcommand", "demo | audit | sweep | bench | train (informational in files)"},
              [](RunConfig& c, const std::string& v) { c.subcommand = v; },
              [](const RunConfig& c) { return c.subcommand; }},
      HR_SIZE("seed", seed, "root seed for every random stream"),
      Setting{{"out", "output directory"}, [](RunConfig& c, const std::string& v) { c.out = v; },
              [](const RunConfig& c) { return c.out; }},
      HR_SIZE("d_model", router.d_model, "model width d"),
      HR_SIZE("n_hubs", router.n_hubs, "number of hubs M"),
      HR_SIZE("n_heads", router.n_heads, "attention heads (must divide d_model)"),
      HR_SIZE("top_k", router.top_k, "council budget k (even)"),
      Setting{{"chunk_size", "chunk size C for causal mode, or 'bidir'"},
              [](RunConfig& c, const std::string& v) {
                if (v == "bidir" || v == "none") {
                  c.router.chunk_size.reset();
                } else {
                  const auto n = parse_u64("chunk_size", v);
                  if (n == 0) throw ConfigError("setting 'chunk_size': must be >= 1 or 'bidir'");
                  c.router.chunk_size = n;
                }
              },
              [](const RunConfig& c) {
                return c.router.chunk_size ? std::to_string(*c.router.chunk_size) : std::string("bidir");
              }},
      HR_DOUBLE("lambda_ortho", router.lambda_ortho, "orthogonality penalty weight"),
      HR_BOOL("score_gate", router.score_gate, "scale council residuals by sigmoid(score)"),
      HR_BOOL("council_causal", router.council_causal, "causal mask inside the council"),
      HR_BOOL("shared_chunk_gate", router.shared_chunk_gate, "one scalar gate for every chunk"),
      HR_SIZE("seq_len", task.seq_len, "routing task sequence length"),
      HR_SIZE("vocab", task.vocab, "routing task vocabulary"),
      HR_SIZE("steps", task.steps, "training steps per cell"),
      HR_SIZE("batch", task.batch, "sequences per step"),
      HR_SIZE("eval_samples", task.eval_samples, "held-out evaluation sequences"),
      HR_DOUBLE("lr", task.lr, "AdamW learning rate"),
      HR_DOUBLE("weight_decay", task.weight_decay, "AdamW decoupled weight decay"),
      HR_DOUBLE("route_weight", task.route_weight, "weight of the routing cross-entropy"),
      HR_SIZE("eval_seed", task.eval_seed, "seed of the shared evaluation set"),
      Setting{{"m_list", "comma-separated hub counts for sweep"},
              [](RunConfig& c, const std::string& v) { c.m_list = parse_list("m_list", v); },
              [](const RunConfig& c) { return fmt_list(c.m_list); }},
      HR_SIZE("seeds", seeds, "seeds per sweep cell (seed, seed+1, ...)"),
      Setting{{"ortho", "on | off | both"},
              [](RunConfig& c, const std::string& v) {
                ortho_variants(v);
                c.ortho = v;
              },
              [](const RunConfig& c) { return c.ortho; }},
      HR_SIZE("jobs", jobs, "parallel sweep cells"),
      HR_SIZE("trials", trials, "audit trials"),
      HR_SIZE("audit_n", audit_n, "audit sequence length"),
      HR_DOUBLE("threshold", threshold, "audit leak threshold"),
      Setting{{"lengths", "comma-separated bench sequence lengths"},
              [](RunConfig& c, const std::string& v) { c.lengths = parse_list("lengths", v); },
              [](const RunConfig& c) { return fmt_list(c.lengths); }},
      HR_SIZE("reps", reps, "timed repetitions per bench length"),
      Setting{{"load", "train: evaluate this checkpoint instead of training"},
              [](RunConfig& c, const std::string& v) { c.load = v; },
              [](const RunConfig& c) { return c.load; }},
  };
  return table;
}

#undef HR_SIZE
#undef HR_DOUBLE
#undef HR_BOOL

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

TaskConfig task_config(const RunConfig& cfg) {
  TaskConfig t = cfg.task;
  t.d_model = cfg.router.d_model;
  t.n_heads = cfg.router.n_heads;
  t.top_k = cfg.router.top_k;
  t.lambda_ortho = cfg.router.lambda_ortho;
  return t;
}

std::string shape_of(const Tensor& t) {
  std::string s;
  for (std::size_t i = 0; i < t.rank(); ++i) s += (i ? "x" : "") + std::to_string(t.shape()[i]);
  return s;
}

int cmd_demo(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  HubRouterConfig rc = cfg.router;
  rc.n_hubs = 2;
  rc.top_k = 4;
  rc.chunk_size.reset();
  const std::size_t n = 8;
  RngStream rng(cfg.seed);
  HubRouter router(rc, rng);
  RngStream data = rng.substream(1);
  const Tensor x = data.normal_tensor({n, rc.d_model}, 1.0);
  NoGradGuard no_grad;
  const auto r = router.forward(x);
  std::ostringstream os;
  os << "worked example: n=" << n << " M=" << rc.n_hubs << " k=" << rc.top_k << " d=" << rc.d_model << '\n'
     << "H' " << shape_of(r.hubs_enriched) << '\n'
     << "F " << shape_of(r.fingerprints) << '\n'
     << "scores " << shape_of(r.scores) << '\n'
     << "|S| " << r.selection.size() << '\n'
     << "selected";
  for (auto i : r.selection.indices) os << ' ' << i;
  os << '\n'
     << "council " << r.selection.size() << 'x' << r.selection.size() << '\n'
     << "output " << shape_of(r.output) << '\n';
  out << os.str();
  write_file(dir / "demo.txt", os.str());
  return kExitOk;
}

int cmd_audit(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  RngStream rng(cfg.seed);
  HubRouter router(cfg.router, rng);
  const auto report = perturbation_audit(router, cfg.audit_n, cfg.trials, rng.substream(0xA0D17), cfg.threshold,
                                         cfg.jobs);
  out << report.summary();
  write_file(dir / "audit_summary.txt", report.summary());
  write_file(dir / "audit_violations.csv", report.violations_csv());
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_sweep(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.seeds; ++i) seeds.push_back(cfg.seed + i);
  const auto cells = run_m_sweep(cfg.m_list, seeds, ortho_variants(cfg.ortho), task_config(cfg), cfg.jobs);
  const auto summary = summarize_sweep(cells);
  write_file(dir / "sweep.csv", sweep_csv(cells));
  write_file(dir / "summary.csv", summary_csv(summary));
  std::ostringstream losses;
  losses << "M,seed,ortho,step,loss\n";
  for (const auto& c : cells)
    for (std::size_t s = 0; s < c.loss_curve.size(); ++s)
      losses << c.n_hubs << ',' << c.seed << ',' << (c.ortho ? "on" : "off") << ',' << s << ',' << fmt(c.loss_curve[s])
             << '\n';
  write_file(dir / "losses.csv", losses.str());
  out << summary_csv(summary);
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  BenchSettings bs;
  bs.n_hubs = cfg.router.n_hubs;
  bs.top_k = cfg.router.top_k;
  bs.n_heads = cfg.router.n_heads;
  bs.seed = cfg.seed;
  const auto cmp = scaling_report(cfg.lengths, cfg.router.d_model, cfg.reps, bs);
  write_file(dir / "bench.csv", bench_csv(cmp));
  write_file(dir / "bench_report.txt", cmp.text());
  out << bench_csv(cmp) << cmp.text();
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  const TaskConfig task = task_config(cfg);
  const bool ortho = cfg.ortho == "on";
  if (cfg.ortho == "both") throw ConfigError("train runs one cell: ortho must be on or off");
  std::ostringstream os;
  if (!cfg.load.empty()) {
    RngStream init = RngStream(cfg.seed).substream(1);
    RoutingModel model(task, cfg.router.n_hubs, ortho ? task.lambda_ortho : 0.0, init);
    auto params = model.named_parameters();
    load_checkpoint_into(params, cfg.load);
    const auto ev = evaluate(model, eval_set(task));
    os << "checkpoint " << cfg.load << '\n'
       << "precision " << fmt(ev.precision) << '\n'
       << "accuracy " << fmt(ev.accuracy) << '\n';
    out << os.str();
    write_file(dir / "eval.txt", os.str());
    return kExitOk;
  }
  const auto cell = train_cell_with_model(cfg.router.n_hubs, cfg.seed, ortho, task);
  save_checkpoint(cell.parameters, dir / "model.ckpt");
  write_file(dir / "train.csv", sweep_csv({cell.result}));
  std::ostringstream losses;
  losses << "step,loss\n";
  for (std::size_t s = 0; s < cell.result.loss_curve.size(); ++s) losses << s << ',' << fmt(cell.result.loss_curve[s]) << '\n';
  write_file(dir / "losses.csv", losses.str());
  os << "M " << cell.result.n_hubs << " seed " << cell.result.seed << " ortho " << (ortho ? "on" : "off") << '\n'
     << "precision " << fmt(cell.result.precision) << (cell.result.success ? " (success)" : "") << '\n'
     << "accuracy " << fmt(cell.result.accuracy) << '\n'
     << "hub gram error " << fmt(cell.result.ortho_start) << " -> " << fmt(cell.result.ortho_final) << '\n'
     << "checkpoint " << (dir / "model.ckpt").string() << '\n';
  out << os.str();
  return kExitOk;
}

}  // namespace

const std::vector<SettingDoc>& setting_docs() {
  static const std::vector<SettingDoc> docs = [] {
    std::vector<SettingDoc> d;
    for (const auto& s : settings()) d.push_back(s.doc);
    return d;
  }();
  return docs;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& s : settings()) {
    if (s.doc.key == key) {
      s.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown setting '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::string manifest_text(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& s : settings()) os << s.doc.key << " = " << s.get(cfg) << '\n';
  return os.str();
}

std::vector<bool> ortho_variants(const std::string& mode) {
  if (mode == "off") return {false};
  if (mode == "on") return {true};
  if (mode == "both") return {false, true};
  throw ConfigError("ortho must be on, off or both, got '" + mode + "'");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"HubRouter: hub-mediated sparse attention toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::map<std::string, std::string> flags;
  std::vector<std::string> extra;
  app.add_option("--config", config_path, "key = value settings file");
  auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
    app.add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  flag("--seed", "seed", "root seed");
  flag("--out", "out", "output directory");
  flag("--m", "m_list", "hub counts, e.g. 1,6,10");
  flag("--seeds", "seeds", "seeds per cell");
  flag("--ortho", "ortho", "on | off | both");
  flag("--chunk-size", "chunk_size", "N or bidir");
  flag("--council-causal", "council_causal", "true | false");
  flag("--trials", "trials", "audit trials");
  flag("--lengths", "lengths", "bench lengths, e.g. 256,512,1024,2048");
  flag("--reps", "reps", "bench repetitions");
  flag("--steps", "steps", "training steps");
  flag("--jobs", "jobs", "parallel sweep cells");
  flag("--n-hubs", "n_hubs", "hub count M");
  flag("--load", "load", "train: evaluate a checkpoint");
  app.add_option("--set", extra, "any other setting as key=value (repeatable)");

  for (const char* name : {"demo", "audit", "sweep", "bench", "train"}) app.add_subcommand(name);
  const std::string keys_help = [] {
    std::string s = "Settings (config file keys):\n";
    for (const auto& d : setting_docs()) s += "  " + d.key + ": " + d.help + "\n";
    return s;
  }();
  app.footer(keys_help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      for (const auto& [k, v] : parse_config_text(read_file(config_path))) apply_setting(cfg, k, v);
    }
    for (const auto& kv : extra) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      flags[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) apply_setting(cfg, k, v);
    cfg.subcommand = app.get_subcommands().front()->get_name();
    cfg.router.validate();
    if (cfg.subcommand == "sweep" || cfg.subcommand == "train") task_config(cfg).validate();

    const std::filesystem::path dir = cfg.out;
    std::filesystem::create_directories(dir);
    write_file(dir / "manifest.txt", manifest_text(cfg));

    if (cfg.subcommand == "demo") return cmd_demo(cfg, dir, out);
    if (cfg.subcommand == "audit") return cmd_audit(cfg, dir, out);
    if (cfg.subcommand == "sweep") return cmd_sweep(cfg, dir, out);
    if (cfg.subcommand == "bench") return cmd_bench(cfg, dir, out);
    return cmd_train(cfg, dir, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace hubrouter::cli
