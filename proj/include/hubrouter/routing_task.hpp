#pragma once
// Synthetic associative-recall routing task and the M-sweep harness.
//
// A sample is a run of distractor tokens with one (key, value) pair planted at
// positions (t, t+1) and the same key repeated as a cue at n-1. The model must
// emit the value at the last position, which it can only do if the council
// picks up position t (whose right neighbour carries the value).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hubrouter/checkpoint.hpp"
#include "hubrouter/rng.hpp"
#include "hubrouter/router.hpp"
#include "hubrouter/selection.hpp"
#include "hubrouter/tensor.hpp"

namespace hubrouter {

// Token ids below this are reserved; 0 doubles as the "previous token" of
// position 0.
inline constexpr std::uint32_t kReservedTokens = 4;

struct TaskConfig {
  static constexpr double success_threshold = 0.90;

  std::size_t seq_len = 64;
  std::size_t vocab = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t top_k = 8;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  std::size_t eval_samples = 200;
  double lr = 3e-3;
  double weight_decay = 0.0;
  // Weight of the auxiliary routing cross-entropy on the score vector.
  double route_weight = 1.0;
  // Applied when a cell runs with ortho on.
  double lambda_ortho = 0.01;
  // The evaluation set is drawn from this seed, shared by every cell.
  std::uint64_t eval_seed = 99;

  // Throws ConfigError.
  void validate() const;
};

struct RoutingSample {
  std::vector<std::uint32_t> tokens;
  std::size_t target_index = 0;  // key position t; the value sits at t+1
  std::size_t cue_index = 0;     // n-1
  std::uint32_t label = 0;       // tokens[t+1]
};

RoutingSample generate_sample(RngStream& rng, const TaskConfig& cfg);

// Mean of 1[targets[i] in selections[i]].
double routing_precision(const std::vector<SelectionSet>& selections, const std::vector<std::size_t>& targets);

// Token + previous-token + position embeddings, one HubRouter block, and a
// linear readout of the final row.
class RoutingModel {
 public:
  RoutingModel(const TaskConfig& task, std::size_t n_hubs, double lambda_ortho, RngStream& rng);

  const HubRouter& router() const { return router_; }
  const TaskConfig& task() const { return task_; }

  Tensor embed(const std::vector<std::uint32_t>& tokens) const;

  struct Forward {
    RouterOutput routed;
    Tensor logits;  // 1 x vocab
  };
  Forward forward(const std::vector<std::uint32_t>& tokens) const;

  // Label cross-entropy plus route_weight times the routing cross-entropy
  // -(log p_t + log p_cue)/2 with p = softmax(scores).
  Tensor sample_loss(const RoutingSample& sample, const Forward& fwd) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;

 private:
  TaskConfig task_;
  Tensor tok_embed_, prev_embed_, pos_embed_;
  HubRouter router_;
  Tensor readout_w_, readout_b_;
};

struct EvalResult {
  double precision = 0.0;
  double accuracy = 0.0;  // readout argmax == label
};

EvalResult evaluate(const RoutingModel& model, const std::vector<RoutingSample>& samples);
std::vector<RoutingSample> eval_set(const TaskConfig& cfg);

struct SweepCellResult {
  std::size_t n_hubs = 0;
  std::uint64_t seed = 0;
  bool ortho = false;
  std::size_t steps = 0;
  double precision = 0.0;
  double accuracy = 0.0;
  bool success = false;
  bool diverged = false;
  std::vector<double> loss_curve;  // mean batch loss per step
  // ||H H^T - I||_F^2 before the first and after the last step.
  double ortho_start = 0.0;
  double ortho_final = 0.0;
  double wall_seconds = 0.0;
};

struct TrainedCell {
  SweepCellResult result;
  std::vector<NamedTensor> parameters;
};

// Deterministic in (n_hubs, seed, ortho, cfg). A non-finite loss stops the
// cell and records it as diverged with precision 0.
SweepCellResult train_cell(std::size_t n_hubs, std::uint64_t seed, bool ortho, const TaskConfig& cfg);
TrainedCell train_cell_with_model(std::size_t n_hubs, std::uint64_t seed, bool ortho, const TaskConfig& cfg);

struct SweepSummaryRow {
  std::size_t n_hubs = 0;
  bool ortho = false;
  std::size_t cells = 0;
  std::size_t n_success = 0;
  double mean_precision = 0.0;
};

// Results ordered by (M, seed, ortho) regardless of `jobs`.
std::vector<SweepCellResult> run_m_sweep(const std::vector<std::size_t>& m_list, const std::vector<std::uint64_t>& seeds,
                                         const std::vector<bool>& ortho_variants, const TaskConfig& cfg,
                                         unsigned jobs = 1);

std::vector<SweepSummaryRow> summarize_sweep(const std::vector<SweepCellResult>& cells);

// M,seed,ortho,steps,final_precision,success,wall_seconds
std::string sweep_csv(const std::vector<SweepCellResult>& cells, bool include_timing = true);
// M,ortho,n_success,mean_precision
std::string summary_csv(const std::vector<SweepSummaryRow>& rows);
// Parses sweep_csv output back into cells (loss curves are not stored).
std::vector<SweepCellResult> parse_sweep_csv(const std::string& text);

}  // namespace hubrouter
