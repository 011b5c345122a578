#include "hubrouter/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hubrouter/errors.hpp"

namespace hubrouter {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss_fn, std::span<Tensor> params,
                                  std::span<const std::vector<double>> analytic, const GradCheckOptions& options) {
  if (options.step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
  if (analytic.size() != params.size()) {
    throw ContractError("finite_diff_check: " + std::to_string(analytic.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  NoGradGuard no_grad;
  GradCheckReport report;
  const double h = options.step;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p].mutable_data();
    if (analytic[p].size() != data.size()) {
      throw ContractError("finite_diff_check: gradient length mismatch for parameter " + std::to_string(p));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn();
      data[i] = saved - h;
      const double down = loss_fn();
      data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.non_finite.emplace_back(p, i);
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[p][i], numeric, options.abs_floor);
      ++report.coordinates_checked;
      if (err > report.max_rel_error || report.coordinates_checked == 1) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = analytic[p][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  const GradCheckOptions& options) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(p.numel(), 0.0);
  }
  return finite_diff_check([&] { return loss_fn().item(); }, params, analytic, options);
}

}  // namespace hubrouter
