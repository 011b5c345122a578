#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hubrouter/tensor.hpp"

namespace hubrouter {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  // (param, index) pairs where f(theta +- h) was not finite; skipped.
  std::vector<std::pair<std::size_t, std::size_t>> non_finite;

  bool passed(double tolerance) const { return non_finite.empty() && max_rel_error < tolerance; }
};

double relative_error(double analytic, double numeric, double abs_floor);

// Central differences (f(theta+h) - f(theta-h)) / 2h against the supplied
// analytic gradients, coordinate by coordinate. loss_fn is evaluated with
// grad recording off and must be deterministic.
GradCheckReport finite_diff_check(const std::function<double()>& loss_fn, std::span<Tensor> params,
                                  std::span<const std::vector<double>> analytic,
                                  const GradCheckOptions& options = {});

// Runs loss_fn once with recording on, backpropagates to get the analytic
// gradients (params' existing gradients are cleared first), then checks them.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace hubrouter
