#include "hubrouter/routing_task.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "hubrouter/errors.hpp"
#include "hubrouter/optim.hpp"
#include "hubrouter/parallel.hpp"

namespace hubrouter {

void TaskConfig::validate() const {
  if (seq_len < 4) throw ConfigError("seq_len must be >= 4 to place a key, its value and a cue, got " + std::to_string(seq_len));
  if (vocab < kReservedTokens + 2) {
    throw ConfigError("vocab must be >= " + std::to_string(kReservedTokens + 2) + " (reserved ids plus a key and a distractor)");
  }
  if (top_k < 2 || top_k % 2 != 0) throw ConfigError("top_k must be even and >= 2");
  if (seq_len <= top_k) throw ConfigError("seq_len must exceed top_k");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (eval_samples == 0) throw ConfigError("eval_samples must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(route_weight >= 0.0) || !(lambda_ortho >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("route_weight, lambda_ortho and weight_decay must be >= 0");
  }
}

RoutingSample generate_sample(RngStream& rng, const TaskConfig& cfg) {
  const std::size_t n = cfg.seq_len;
  if (n < 4) throw ConfigError("generate_sample: seq_len " + std::to_string(n) + " too small to place a pair and a cue");
  if (cfg.vocab < kReservedTokens + 2) throw ConfigError("generate_sample: vocab too small for a key and distractors");
  const std::uint64_t alphabet = cfg.vocab - kReservedTokens;
  const auto key = static_cast<std::uint32_t>(kReservedTokens + rng.below(alphabet));
  RoutingSample s;
  s.tokens.resize(n);
  for (auto& tok : s.tokens) {
    // Distractors never repeat the key, so the cue has exactly one match.
    auto v = static_cast<std::uint32_t>(kReservedTokens + rng.below(alphabet - 1));
    tok = v >= key ? v + 1 : v;
  }
  s.target_index = static_cast<std::size_t>(rng.below(n - 2));
  s.cue_index = n - 1;
  s.tokens[s.target_index] = key;
  s.tokens[s.cue_index] = key;
  s.label = s.tokens[s.target_index + 1];
  return s;
}

double routing_precision(const std::vector<SelectionSet>& selections, const std::vector<std::size_t>& targets) {
  if (selections.empty()) throw ContractError("routing_precision: no samples");
  if (selections.size() != targets.size()) {
    throw ContractError("routing_precision: " + std::to_string(selections.size()) + " selections vs " +
                        std::to_string(targets.size()) + " targets");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < selections.size(); ++i) hits += selections[i].contains(targets[i]);
  return static_cast<double>(hits) / static_cast<double>(selections.size());
}

namespace {

constexpr double kEmbeddingStd = 1.0;
constexpr double kReadoutStd = 0.02;

HubRouterConfig router_config(const TaskConfig& task, std::size_t n_hubs, double lambda_ortho) {
  HubRouterConfig cfg;
  cfg.d_model = task.d_model;
  cfg.n_hubs = n_hubs;
  cfg.n_heads = task.n_heads;
  cfg.top_k = task.top_k;
  cfg.lambda_ortho = lambda_ortho;
  return cfg;
}

}  // namespace

RoutingModel::RoutingModel(const TaskConfig& task, std::size_t n_hubs, double lambda_ortho, RngStream& rng)
    : task_(task),
      tok_embed_(rng.normal_tensor({task.vocab, task.d_model}, kEmbeddingStd, true)),
      prev_embed_(rng.normal_tensor({task.vocab, task.d_model}, kEmbeddingStd, true)),
      pos_embed_(rng.normal_tensor({task.seq_len, task.d_model}, kEmbeddingStd, true)),
      router_(router_config(task, n_hubs, lambda_ortho), rng),
      readout_w_(rng.normal_tensor({task.d_model, task.vocab}, kReadoutStd, true)),
      readout_b_(Tensor::zeros({task.vocab}, true)) {
  task_.validate();
}

Tensor RoutingModel::embed(const std::vector<std::uint32_t>& tokens) const {
  if (tokens.size() != task_.seq_len) {
    throw ContractError("RoutingModel: sequence of " + std::to_string(tokens.size()) + " tokens, expected " +
                        std::to_string(task_.seq_len));
  }
  std::vector<std::size_t> cur(tokens.begin(), tokens.end());
  std::vector<std::size_t> prev(tokens.size(), 0);
  for (std::size_t i = 1; i < tokens.size(); ++i) prev[i] = tokens[i - 1];
  return add(add(gather_rows(tok_embed_, cur), gather_rows(prev_embed_, prev)), pos_embed_);
}

RoutingModel::Forward RoutingModel::forward(const std::vector<std::uint32_t>& tokens) const {
  Forward f;
  f.routed = router_.forward(embed(tokens));
  const std::size_t n = tokens.size();
  f.logits = add_bias(matmul(slice_rows(f.routed.output, n - 1, n), readout_w_), readout_b_);
  return f;
}

Tensor RoutingModel::sample_loss(const RoutingSample& sample, const Forward& fwd) const {
  const Tensor label_ce = scale(pick(log_softmax_lastdim(fwd.logits), sample.label), -1.0);
  if (task_.route_weight == 0.0) return label_ce;
  const Tensor logp = log_softmax_lastdim(fwd.routed.scores);
  const Tensor route = scale(add(pick(logp, sample.target_index), pick(logp, sample.cue_index)), -0.5);
  return add(label_ce, scale(route, task_.route_weight));
}

std::vector<NamedTensor> RoutingModel::named_parameters() const {
  std::vector<NamedTensor> out = {
      {"embed.tok", tok_embed_},
      {"embed.prev", prev_embed_},
      {"embed.pos", pos_embed_},
  };
  for (auto& nt : router_.named_parameters()) out.push_back(nt);
  out.push_back({"readout.w", readout_w_});
  out.push_back({"readout.b", readout_b_});
  return out;
}

std::vector<Tensor> RoutingModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

std::vector<RoutingSample> eval_set(const TaskConfig& cfg) {
  RngStream rng(cfg.eval_seed);
  std::vector<RoutingSample> out;
  out.reserve(cfg.eval_samples);
  for (std::size_t i = 0; i < cfg.eval_samples; ++i) out.push_back(generate_sample(rng, cfg));
  return out;
}

EvalResult evaluate(const RoutingModel& model, const std::vector<RoutingSample>& samples) {
  NoGradGuard no_grad;
  std::vector<SelectionSet> selections;
  std::vector<std::size_t> targets;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    auto f = model.forward(s.tokens);
    const auto logits = f.logits.data();
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    correct += best == s.label;
    selections.push_back(std::move(f.routed.selection));
    targets.push_back(s.target_index);
  }
  EvalResult r;
  r.precision = routing_precision(selections, targets);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return r;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double hub_gram_error(const HubRouter& router) {
  NoGradGuard no_grad;
  return ortho_loss(router.bank().hubs, 1.0).item();
}

}  // namespace

TrainedCell train_cell_with_model(std::size_t n_hubs, std::uint64_t seed, bool ortho, const TaskConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const RngStream root(seed);
  RngStream init = root.substream(1);
  RngStream data = root.substream(2);
  RoutingModel model(cfg, n_hubs, ortho ? cfg.lambda_ortho : 0.0, init);
  auto params = model.parameters();
  AdamWOptions opts;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  AdamWState opt(opts);

  TrainedCell cell;
  SweepCellResult& r = cell.result;
  r.n_hubs = n_hubs;
  r.seed = seed;
  r.ortho = ortho;
  r.steps = cfg.steps;
  r.ortho_start = hub_gram_error(model.router());
  r.loss_curve.reserve(cfg.steps);

  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps && !r.diverged; ++step) {
    zero_grads(params);
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const RoutingSample sample = generate_sample(data, cfg);
      const auto fwd = model.forward(sample.tokens);
      const Tensor loss = scale(model.sample_loss(sample, fwd), inv_batch);
      total += loss.item();
      if (!std::isfinite(total)) break;
      loss.backward();
    }
    if (ortho && std::isfinite(total)) {
      const Tensor reg = model.router().ortho_loss();
      total += reg.item();
      reg.backward();
    }
    r.loss_curve.push_back(total);
    if (!std::isfinite(total)) {
      r.diverged = true;
      break;
    }
    adamw_step(params, opt);
  }

  if (r.diverged) {
    r.precision = 0.0;
    r.accuracy = 0.0;
  } else {
    const auto ev = evaluate(model, eval_set(cfg));
    r.precision = ev.precision;
    r.accuracy = ev.accuracy;
  }
  r.success = r.precision > TaskConfig::success_threshold;
  r.ortho_final = hub_gram_error(model.router());
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  cell.parameters = model.named_parameters();
  return cell;
}

SweepCellResult train_cell(std::size_t n_hubs, std::uint64_t seed, bool ortho, const TaskConfig& cfg) {
  return train_cell_with_model(n_hubs, seed, ortho, cfg).result;
}

std::vector<SweepCellResult> run_m_sweep(const std::vector<std::size_t>& m_list, const std::vector<std::uint64_t>& seeds,
                                         const std::vector<bool>& ortho_variants, const TaskConfig& cfg,
                                         unsigned jobs) {
  if (m_list.empty() || seeds.empty() || ortho_variants.empty()) throw ContractError("run_m_sweep: empty grid");
  cfg.validate();
  struct Cell {
    std::size_t m;
    std::uint64_t seed;
    bool ortho;
  };
  std::vector<Cell> grid;
  for (auto m : m_list)
    for (auto s : seeds)
      for (bool o : ortho_variants) grid.push_back({m, s, o});
  std::sort(grid.begin(), grid.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.m, a.seed, a.ortho) < std::tie(b.m, b.seed, b.ortho);
  });

  std::vector<SweepCellResult> out(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    const auto& c = grid[i];
    try {
      out[i] = train_cell(c.m, c.seed, c.ortho, cfg);
    } catch (const std::exception&) {
      // A failing cell is recorded and the sweep continues.
      SweepCellResult failed;
      failed.n_hubs = c.m;
      failed.seed = c.seed;
      failed.ortho = c.ortho;
      failed.steps = cfg.steps;
      failed.diverged = true;
      out[i] = failed;
    }
  });
  return out;
}

std::vector<SweepSummaryRow> summarize_sweep(const std::vector<SweepCellResult>& cells) {
  std::map<std::pair<std::size_t, bool>, SweepSummaryRow> rows;
  for (const auto& c : cells) {
    auto& row = rows[{c.n_hubs, c.ortho}];
    row.n_hubs = c.n_hubs;
    row.ortho = c.ortho;
    row.cells += 1;
    row.n_success += c.success;
    row.mean_precision += c.precision;
  }
  std::vector<SweepSummaryRow> out;
  for (auto& [key, row] : rows) {
    row.mean_precision /= static_cast<double>(row.cells);
    out.push_back(row);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepCellResult>& cells, bool include_timing) {
  std::ostringstream os;
  os << "M,seed,ortho,steps,final_precision,success,wall_seconds\n";
  for (const auto& c : cells) {
    os << c.n_hubs << ',' << c.seed << ',' << (c.ortho ? "on" : "off") << ',' << c.steps << ','
       << shortest(c.precision) << ',' << (c.success ? 1 : 0) << ',';
    if (include_timing) os << std::fixed << std::setprecision(3) << c.wall_seconds << std::defaultfloat;
    os << '\n';
  }
  return os.str();
}

std::string summary_csv(const std::vector<SweepSummaryRow>& rows) {
  std::ostringstream os;
  os << "M,ortho,n_success,mean_precision\n";
  for (const auto& r : rows) {
    os << r.n_hubs << ',' << (r.ortho ? "on" : "off") << ',' << r.n_success << ',' << shortest(r.mean_precision) << '\n';
  }
  return os.str();
}

std::vector<SweepCellResult> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("M,seed,ortho,", 0) != 0) throw FormatError("sweep csv: missing header");
  std::vector<SweepCellResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() < 6) throw FormatError("sweep csv: short row '" + line + "'");
    SweepCellResult c;
    c.n_hubs = std::stoull(f[0]);
    c.seed = std::stoull(f[1]);
    c.ortho = f[2] == "on";
    c.steps = std::stoull(f[3]);
    c.precision = std::stod(f[4]);
    c.success = f[5] == "1";
    if (f.size() > 6 && !f[6].empty()) c.wall_seconds = std::stod(f[6]);
    out.push_back(c);
  }
  return out;
}

}  // namespace hubrouter
