#include "hubrouter/audit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hubrouter/errors.hpp"
#include "hubrouter/parallel.hpp"

namespace hubrouter {

std::vector<std::size_t> allowed_influence_set(std::size_t q, std::size_t n, std::optional<std::size_t> chunk_size) {
  if (q >= n) throw ContractError("allowed_influence_set: q=" + std::to_string(q) + " outside [0, " + std::to_string(n) + ")");
  std::size_t first = 0;
  if (chunk_size) {
    if (*chunk_size == 0) throw ConfigError("allowed_influence_set: chunk size must be >= 1");
    first = (q / *chunk_size) * *chunk_size;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = first; i < n; ++i) out.push_back(i);
  return out;
}

std::string influence_rule_name(std::optional<std::size_t> chunk_size) {
  if (!chunk_size) return "bidirectional-all";
  if (*chunk_size == 1) return "strict-causal";
  return "chunk-prefix(C=" + std::to_string(*chunk_size) + ")";
}

std::string LeakReport::summary() const {
  std::ostringstream os;
  os << "mode: " << (chunk_size ? "chunked C=" + std::to_string(*chunk_size) : std::string("bidirectional")) << '\n'
     << "rule: " << rule << '\n'
     << "n: " << n << '\n'
     << "trials: " << trials << '\n'
     << "violations: " << violations.size() << '\n';
  if (!violations.empty()) {
    const auto worst = std::max_element(violations.begin(), violations.end(),
                                        [](const auto& a, const auto& b) { return a.delta < b.delta; });
    os << "worst: trial " << worst->trial << " q=" << worst->perturbed << " i=" << worst->affected
       << " delta=" << worst->delta << '\n';
  }
  os << "result: " << (passed() ? "PASS" : "LEAK") << '\n';
  return os.str();
}

std::string LeakReport::violations_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "trial,q,i,delta\n";
  for (const auto& v : violations) os << v.trial << ',' << v.perturbed << ',' << v.affected << ',' << v.delta << '\n';
  return os.str();
}

namespace {

std::vector<LeakViolation> run_trial(const HubRouter& router, std::size_t n, std::size_t trial, const RngStream& base,
                                     double threshold) {
  NoGradGuard no_grad;
  const auto& cfg = router.config();
  const std::size_t d = cfg.d_model;
  RngStream rng = base.substream(trial);
  Tensor x = rng.normal_tensor({n, d}, 1.0);
  const std::size_t q = static_cast<std::size_t>(rng.below(n));
  Tensor perturbed = x.detach();
  for (std::size_t j = 0; j < d; ++j) perturbed.mutable_data()[q * d + j] = rng.normal();

  const Tensor a = router.forward(x).output;
  const Tensor b = router.forward(perturbed).output;

  const auto allowed = allowed_influence_set(q, n, cfg.chunk_size);
  const std::size_t first_allowed = allowed.empty() ? n : allowed.front();
  std::vector<LeakViolation> out;
  for (std::size_t i = 0; i < first_allowed; ++i) {
    double delta = 0.0;
    for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(a.at(i, j) - b.at(i, j)));
    if (!(delta <= threshold)) out.push_back({trial, q, i, delta});
  }
  return out;
}

}  // namespace

LeakReport perturbation_audit(const HubRouter& router, std::size_t n, std::size_t trials, const RngStream& rng,
                              double threshold, unsigned jobs) {
  if (trials < 1) throw ContractError("perturbation_audit: trials must be >= 1");
  if (n < 1) throw ContractError("perturbation_audit: n must be >= 1");
  LeakReport report;
  report.chunk_size = router.config().chunk_size;
  report.n = n;
  report.trials = trials;
  report.rule = influence_rule_name(report.chunk_size);

  std::vector<std::vector<LeakViolation>> per_trial(trials);
  parallel_for(trials, jobs, [&](std::size_t t) { per_trial[t] = run_trial(router, n, t, rng, threshold); });
  for (auto& v : per_trial) report.violations.insert(report.violations.end(), v.begin(), v.end());
  return report;
}

}  // namespace hubrouter
