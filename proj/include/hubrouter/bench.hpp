#pragma once
// Forward-pass timing of HubRouter against dense self-attention, reported as
// log-log scaling slopes rather than absolute throughput. Batch size is 1, so
// tokens/sec is n / median_seconds.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hubrouter/router.hpp"
#include "hubrouter/tensor.hpp"

namespace hubrouter {

// Dense multi-head self-attention over every row followed by the same
// FFN residual the council uses: Y = A + FFN(A), with the n x n weights
// materialized. With identical weights this equals HubRouter::council on a
// selection covering every position and no causal mask.
Tensor naive_attention_forward(const Tensor& x, const CouncilWeights& w, std::size_t heads);

CouncilWeights make_council_weights(std::size_t d, RngStream& rng);

enum class ModelKind { HubRouter, Attention };
std::string kind_name(ModelKind kind);

struct BenchSettings {
  std::size_t n_hubs = 16;
  std::size_t top_k = 8;
  std::size_t n_heads = 4;
  std::uint64_t seed = 0;
};

struct TimingResult {
  ModelKind kind = ModelKind::HubRouter;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t reps = 0;             // may exceed the request when the timer is coarse
  std::vector<double> samples;      // seconds, one per rep
  double median_seconds = 0.0;
  double tokens_per_sec = 0.0;
};

// One untimed warmup, then `reps` timed forwards without a gradient tape.
// reps must be >= 3.
TimingResult time_forward(ModelKind kind, std::size_t n, std::size_t d, std::size_t reps,
                          const BenchSettings& settings = {});

// Lengths below this are timed and reported but excluded from the fit.
inline constexpr std::size_t kFitFloor = 256;

struct ScalingReport {
  ModelKind kind = ModelKind::HubRouter;
  std::vector<TimingResult> timings;
  double slope = 0.0;      // least-squares d log t / d log n over fitted lengths
  double intercept = 0.0;
  double residual = 0.0;   // RMS residual of the log-log fit
  std::size_t fitted_points = 0;
  bool non_monotone = false;
};

struct ScalingComparison {
  ScalingReport hubrouter;
  ScalingReport attention;
  double slope_difference() const { return attention.slope - hubrouter.slope; }
  std::string text() const;
};

// Fit of log(seconds) = slope * log(n) + intercept using points with n >= floor.
void fit_loglog(ScalingReport& report, std::size_t floor = kFitFloor);

// Needs >= 4 strictly increasing lengths spanning at least 8x and reps >= 3.
ScalingComparison scaling_report(const std::vector<std::size_t>& lengths, std::size_t d, std::size_t reps,
                                 const BenchSettings& settings = {});

// kind,n,d,reps,median_seconds,tokens_per_sec
std::string bench_csv(const ScalingComparison& cmp);

}  // namespace hubrouter
