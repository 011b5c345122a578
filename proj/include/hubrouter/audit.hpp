#pragma once
// Black-box causality auditing: perturb one input row, compare every output
// row, and flag rows that moved although the influence rule says they must
// not depend on the perturbed position.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hubrouter/rng.hpp"
#include "hubrouter/router.hpp"

namespace hubrouter {

inline constexpr double kLeakThreshold = 1e-9;

struct LeakViolation {
  std::size_t trial = 0;
  std::size_t perturbed = 0;  // q
  std::size_t affected = 0;   // i
  double delta = 0.0;         // max abs change over row i
};

struct LeakReport {
  std::optional<std::size_t> chunk_size;  // nullopt: bidirectional
  std::size_t n = 0;
  std::size_t trials = 0;
  std::string rule;
  std::vector<LeakViolation> violations;

  bool passed() const { return violations.empty(); }
  std::string summary() const;
  // trial,q,i,delta
  std::string violations_csv() const;
};

// Positions whose output may change when input row q changes.
// Bidirectional: every position. Chunked: every i with floor(i/C) >= floor(q/C),
// which for C = 1 is {q, ..., n-1}.
std::vector<std::size_t> allowed_influence_set(std::size_t q, std::size_t n, std::optional<std::size_t> chunk_size);

std::string influence_rule_name(std::optional<std::size_t> chunk_size);

// Each trial draws X ~ N(0, 1) of n x d and a position q from its own
// substream of rng, replaces row q with fresh noise and compares rowwise.
// Trials may run on `jobs` threads; the report is ordered by trial.
LeakReport perturbation_audit(const HubRouter& router, std::size_t n, std::size_t trials, const RngStream& rng,
                              double threshold = kLeakThreshold, unsigned jobs = 1);

}  // namespace hubrouter
