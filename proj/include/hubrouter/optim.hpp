#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hubrouter/tensor.hpp"

namespace hubrouter {

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Moments are created lazily to match the parameter shapes on the first step.
struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  AdamWState() = default;
  explicit AdamWState(AdamWOptions opts) : options(opts) {}
};

// Decoupled weight decay (p -= lr * wd * p) followed by the bias-corrected
// Adam update. A parameter with no gradient buffer is treated as zero grad.
void adamw_step(std::span<Tensor> params, AdamWState& state);

// Same, with gradients supplied explicitly (one span per parameter).
void adamw_step(std::span<Tensor> params, std::span<const std::span<const double>> grads, AdamWState& state);

void zero_grads(std::span<Tensor> params);

}  // namespace hubrouter
