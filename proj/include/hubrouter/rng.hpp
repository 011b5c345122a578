#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hubrouter/tensor.hpp"

namespace hubrouter {

// Counter-based SplitMix64 stream: draw i (0-based) is
//   z = seed + (i + 1) * 0x9E3779B97F4A7C15
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
// so the sequence depends only on the seed and the draw count, on every
// platform. Normals use Box-Muller on two uniform draws.
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits.
  double uniform();
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  double normal(double mean = 0.0, double stddev = 1.0);

  // Independent stream derived from this seed and a tag (does not advance this one).
  RngStream substream(std::uint64_t tag) const;

  Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace hubrouter
