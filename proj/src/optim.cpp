#include "hubrouter/optim.hpp"

#include <cmath>
#include <string>

#include "hubrouter/errors.hpp"

namespace hubrouter {

void adamw_step(std::span<Tensor> params, std::span<const std::span<const double>> grads, AdamWState& state) {
  if (grads.size() != params.size()) {
    throw ContractError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        (!grads[i].empty() && grads[i].size() != params[i].numel())) {
      throw ContractError("adamw_step: state/gradient shape mismatch for parameter " + std::to_string(i) +
                          " of shape " + shape_str(params[i].shape()));
    }
  }

  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      p[j] -= o.lr * o.weight_decay * p[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

void adamw_step(std::span<Tensor> params, AdamWState& state) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adamw_step(params, grads, state);
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace hubrouter
