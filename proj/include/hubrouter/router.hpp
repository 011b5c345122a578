#pragma once
// HubRouter: hub-mediated sparse attention.
//
//   encode   H' = H + MHA(Q=H, K=X, V=X)                        O(nMd)
//   decode   F_i = softmax(x_i H'^T / sqrt(d)) H'                O(nMd)
//   score    s_i = MLP(F_i)
//   select   top k/2 scores plus their right neighbours          |S| <= k
//   council  Y_S = A + FFN(A), A = MHA(X_S, X_S, X_S)            O(k^2 d)
//   fuse     x'_i = x_i + sigmoid(g) [* sigmoid(s_i)] Y_i for i in S, x_i otherwise
//
// The chunked causal variant replaces the encode with a gated recurrence over
// chunks of C tokens, H'_c = H'_{c-1} + sigmoid(g_c) MHA(H'_{c-1}, X_c, X_c)
// with H'_{-1} = H, decodes chunk c against H'_c only, and selects with a
// prefix-only rule so no output row depends on later tokens' scores.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hubrouter/checkpoint.hpp"
#include "hubrouter/rng.hpp"
#include "hubrouter/selection.hpp"
#include "hubrouter/tensor.hpp"

namespace hubrouter {

struct HubRouterConfig {
  std::size_t d_model = 64;
  std::size_t n_hubs = 16;
  std::size_t n_heads = 4;
  std::size_t top_k = 8;
  // Chunk size C for the causal variant; nullopt means bidirectional.
  std::optional<std::size_t> chunk_size;
  double lambda_ortho = 0.01;
  // Scale each council residual by sigmoid(s_i) so the score head is trained.
  bool score_gate = true;
  // Council query at original position i sees keys at positions <= i only.
  bool council_causal = true;
  // One learned scalar for every chunk gate instead of an affine map of the
  // chunk's mean token.
  bool shared_chunk_gate = false;

  bool bidirectional() const { return !chunk_size.has_value(); }
  // Throws ConfigError on the first violated invariant.
  void validate() const;
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each d x d, no biases
};

struct HubBank {
  Tensor hubs;          // H, M x d
  Tensor fusion_gate;   // g, [1]
  Tensor chunk_gate_w;  // d x 1
  Tensor chunk_gate_b;  // [1]
};

struct ScoreHead {
  Tensor w1, b1;  // d x d, [d]
  Tensor w2, b2;  // d x 1, [1]
};

struct CouncilWeights {
  AttentionWeights attn;
  Tensor ffn_w1, ffn_b1;  // d x 4d, [4d]
  Tensor ffn_w2, ffn_b2;  // 4d x d, [d]
};

struct RouterOutput {
  Tensor output;         // n x d
  SelectionSet selection;
  Tensor ortho_loss;     // [1], lambda * ||H H^T - I||_F^2
  Tensor fingerprints;   // n x d
  Tensor scores;         // [n]
  Tensor hubs_enriched;  // M x d; the last chunk's state in causal mode
};

// Multi-head attention of q_in rows over kv_in rows. allowed, when given, is a
// q_rows x kv_rows mask (1 = may attend).
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionWeights& w,
                            std::size_t heads, const std::vector<std::uint8_t>* allowed = nullptr);

// lambda * ||H H^T - I_M||_F^2.
Tensor ortho_loss(const Tensor& hubs, double lambda);

// Original-position causal mask over the selected rows.
std::vector<std::uint8_t> council_mask(const SelectionSet& selection, bool causal);

class HubRouter {
 public:
  // Projections ~ N(0, 0.02), hubs ~ N(0, 1/d), biases and gates 0.
  HubRouter(HubRouterConfig config, RngStream& rng);

  const HubRouterConfig& config() const { return config_; }
  HubBank& bank() { return bank_; }
  const HubBank& bank() const { return bank_; }
  AttentionWeights& encoder() { return encoder_; }
  ScoreHead& score_head() { return score_; }
  CouncilWeights& council_weights() { return council_; }

  Tensor encode(const Tensor& x) const;
  // One chunk step of the causal recurrence.
  Tensor encode_chunk(const Tensor& hub_state, const Tensor& chunk) const;
  Tensor chunk_gate(const Tensor& chunk) const;
  static Tensor decode(const Tensor& x, const Tensor& hubs_enriched);
  Tensor score(const Tensor& fingerprints) const;
  Tensor council(const Tensor& x_sel, const SelectionSet& selection, bool causal) const;
  Tensor fuse(const Tensor& x, const Tensor& y_sel, const SelectionSet& selection, const Tensor& scores) const;

  RouterOutput forward(const Tensor& x) const;
  RouterOutput forward_bidirectional(const Tensor& x) const;
  RouterOutput forward_chunked_causal(const Tensor& x) const;

  Tensor ortho_loss() const;

  // Checkpoint names: hub.H, hub.g, enc.*, score.*, council.*, chunkgate.*
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;

 private:
  void check_input(const Tensor& x) const;

  HubRouterConfig config_;
  HubBank bank_;
  AttentionWeights encoder_;
  ScoreHead score_;
  CouncilWeights council_;
};

}  // namespace hubrouter
