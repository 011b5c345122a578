#include "hubrouter/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>

#include "hubrouter/errors.hpp"

namespace hubrouter {

Tensor naive_attention_forward(const Tensor& x, const CouncilWeights& w, std::size_t heads) {
  if (x.rank() != 2 || x.cols() != w.attn.wq.rows()) {
    throw ShapeError("naive_attention_forward: input " + shape_str(x.shape()) + " vs projections " +
                     shape_str(w.attn.wq.shape()));
  }
  if (heads == 0 || x.cols() % heads != 0) throw ShapeError("naive_attention_forward: heads must divide d");
  const Tensor attn = multi_head_attention(x, x, w.attn, heads);
  const Tensor hidden = relu(add_bias(matmul(attn, w.ffn_w1), w.ffn_b1));
  return add(attn, add_bias(matmul(hidden, w.ffn_w2), w.ffn_b2));
}

CouncilWeights make_council_weights(std::size_t d, RngStream& rng) {
  CouncilWeights w;
  w.attn.wq = rng.normal_tensor({d, d}, 0.02);
  w.attn.wk = rng.normal_tensor({d, d}, 0.02);
  w.attn.wv = rng.normal_tensor({d, d}, 0.02);
  w.attn.wo = rng.normal_tensor({d, d}, 0.02);
  w.ffn_w1 = rng.normal_tensor({d, 4 * d}, 0.02);
  w.ffn_b1 = Tensor::zeros({4 * d});
  w.ffn_w2 = rng.normal_tensor({4 * d, d}, 0.02);
  w.ffn_b2 = Tensor::zeros({d});
  return w;
}

std::string kind_name(ModelKind kind) { return kind == ModelKind::HubRouter ? "hubrouter" : "attention"; }

namespace {

using Clock = std::chrono::steady_clock;

double clock_resolution() {
  static const double resolution = [] {
    double best = 1.0;
    for (int i = 0; i < 64; ++i) {
      const auto a = Clock::now();
      auto b = Clock::now();
      while (b == a) b = Clock::now();
      best = std::min(best, std::chrono::duration<double>(b - a).count());
    }
    return best;
  }();
  return resolution;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TimingResult time_forward(ModelKind kind, std::size_t n, std::size_t d, std::size_t reps, const BenchSettings& settings) {
  if (reps < 3) throw ContractError("time_forward: reps must be >= 3, got " + std::to_string(reps));
  if (n == 0) throw ContractError("time_forward: n must be >= 1");
  NoGradGuard no_grad;
  RngStream rng(settings.seed);
  const Tensor x = rng.normal_tensor({n, d}, 1.0);

  HubRouterConfig cfg;
  cfg.d_model = d;
  cfg.n_hubs = settings.n_hubs;
  cfg.n_heads = settings.n_heads;
  cfg.top_k = settings.top_k;
  std::optional<HubRouter> router;
  CouncilWeights dense;
  if (kind == ModelKind::HubRouter) {
    router.emplace(cfg, rng);
  } else {
    dense = make_council_weights(d, rng);
  }
  auto run_once = [&] {
    const Tensor y = kind == ModelKind::HubRouter ? router->forward(x).output
                                                  : naive_attention_forward(x, dense, settings.n_heads);
    return y.data()[0];
  };

  volatile double sink = run_once();  // warmup
  TimingResult r;
  r.kind = kind;
  r.n = n;
  r.d = d;
  const double resolution = clock_resolution();
  std::size_t target = reps;
  while (true) {
    r.samples.clear();
    for (std::size_t i = 0; i < target; ++i) {
      const auto t0 = Clock::now();
      sink = sink + run_once();
      r.samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    r.median_seconds = median(r.samples);
    // Resolution must stay under 1% of the measured interval.
    if (resolution <= 0.01 * r.median_seconds || target >= 64 * reps) break;
    target *= 2;
  }
  (void)sink;
  r.reps = target;
  r.tokens_per_sec = r.median_seconds > 0 ? static_cast<double>(n) / r.median_seconds : 0.0;
  return r;
}

void fit_loglog(ScalingReport& report, std::size_t floor) {
  std::vector<double> xs, ys;
  report.non_monotone = false;
  for (std::size_t i = 0; i < report.timings.size(); ++i) {
    const auto& t = report.timings[i];
    if (i > 0 && t.median_seconds < report.timings[i - 1].median_seconds) report.non_monotone = true;
    if (t.n >= floor && t.median_seconds > 0) {
      xs.push_back(std::log(static_cast<double>(t.n)));
      ys.push_back(std::log(t.median_seconds));
    }
  }
  report.fitted_points = xs.size();
  if (xs.size() < 2) throw ContractError("fit_loglog: need at least two lengths >= " + std::to_string(floor));
  const double k = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= k;
  my /= k;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  report.slope = sxy / sxx;
  report.intercept = my - report.slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (report.slope * xs[i] + report.intercept);
    ss += e * e;
  }
  report.residual = std::sqrt(ss / k);
}

ScalingComparison scaling_report(const std::vector<std::size_t>& lengths, std::size_t d, std::size_t reps,
                                 const BenchSettings& settings) {
  if (lengths.size() < 4) throw ContractError("scaling_report: need at least 4 lengths");
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] <= lengths[i - 1]) throw ContractError("scaling_report: lengths must be strictly increasing");
  }
  if (lengths.back() < 8 * lengths.front()) throw ContractError("scaling_report: lengths must span at least 8x");
  ScalingComparison cmp;
  cmp.hubrouter.kind = ModelKind::HubRouter;
  cmp.attention.kind = ModelKind::Attention;
  // Timed regions never overlap: every measurement runs on this thread in turn.
  for (auto n : lengths) {
    cmp.hubrouter.timings.push_back(time_forward(ModelKind::HubRouter, n, d, reps, settings));
    cmp.attention.timings.push_back(time_forward(ModelKind::Attention, n, d, reps, settings));
  }
  fit_loglog(cmp.hubrouter);
  fit_loglog(cmp.attention);
  return cmp;
}

std::string ScalingComparison::text() const {
  std::ostringstream os;
  for (const auto* r : {&hubrouter, &attention}) {
    os << kind_name(r->kind) << ": slope " << r->slope << " (rms residual " << r->residual << ", " << r->fitted_points
       << " points with n >= " << kFitFloor << ")" << (r->non_monotone ? " [non-monotone timings]" : "") << '\n';
  }
  os << "slope difference (attention - hubrouter): " << slope_difference() << '\n';
  return os.str();
}

std::string bench_csv(const ScalingComparison& cmp) {
  std::ostringstream os;
  os << "kind,n,d,reps,median_seconds,tokens_per_sec\n";
  os.precision(9);
  for (const auto* r : {&cmp.hubrouter, &cmp.attention})
    for (const auto& t : r->timings)
      os << kind_name(t.kind) << ',' << t.n << ',' << t.d << ',' << t.reps << ',' << t.median_seconds << ','
         << t.tokens_per_sec << '\n';
  return os.str();
}

}  // namespace hubrouter
