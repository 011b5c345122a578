#include "hubrouter/router.hpp"

#include <algorithm>
#include <cmath>

#include "hubrouter/errors.hpp"

namespace hubrouter {

void HubRouterConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (n_hubs == 0) throw ConfigError("n_hubs must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  if (top_k < 2 || top_k % 2 != 0) throw ConfigError("top_k must be even and >= 2, got " + std::to_string(top_k));
  if (chunk_size && *chunk_size < 1) throw ConfigError("chunk_size must be >= 1 in causal mode");
  if (!(lambda_ortho >= 0.0)) throw ConfigError("lambda_ortho must be >= 0");
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionWeights& w, std::size_t heads,
                            const std::vector<std::uint8_t>* allowed) {
  const std::size_t d = q_in.cols();
  if (kv_in.cols() != d || w.wq.rows() != d) {
    throw ShapeError("multi_head_attention: width mismatch " + shape_str(q_in.shape()) + " vs " + shape_str(kv_in.shape()) +
                     " with projections " + shape_str(w.wq.shape()));
  }
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const Tensor q = matmul(q_in, w.wq);
  const Tensor k = matmul(kv_in, w.wk);
  const Tensor v = matmul(kv_in, w.wv);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * hd, hi = lo + hd;
    Tensor logits = scale(matmul_nt(slice_cols(q, lo, hi), slice_cols(k, lo, hi)), inv_sqrt);
    Tensor probs = allowed ? masked_softmax_lastdim(logits, *allowed) : softmax_lastdim(logits);
    outs.push_back(matmul(probs, slice_cols(v, lo, hi)));
  }
  const Tensor merged = heads == 1 ? outs[0] : concat_cols(outs);
  return matmul(merged, w.wo);
}

Tensor ortho_loss(const Tensor& hubs, double lambda) {
  const Tensor gram = matmul_nt(hubs, hubs);
  const Tensor diff = sub(gram, Tensor::identity(hubs.rows()));
  return scale(sum(mul(diff, diff)), lambda);
}

std::vector<std::uint8_t> council_mask(const SelectionSet& selection, bool causal) {
  const std::size_t m = selection.size();
  std::vector<std::uint8_t> allowed(m * m, 1);
  if (causal) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) allowed[i * m + j] = selection.indices[j] <= selection.indices[i];
  }
  return allowed;
}

namespace {

constexpr double kProjectionStd = 0.02;

AttentionWeights init_attention(RngStream& rng, std::size_t d) {
  AttentionWeights w;
  w.wq = rng.normal_tensor({d, d}, kProjectionStd, true);
  w.wk = rng.normal_tensor({d, d}, kProjectionStd, true);
  w.wv = rng.normal_tensor({d, d}, kProjectionStd, true);
  w.wo = rng.normal_tensor({d, d}, kProjectionStd, true);
  return w;
}

}  // namespace

HubRouter::HubRouter(HubRouterConfig config, RngStream& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t m = config_.n_hubs;
  bank_.hubs = rng.normal_tensor({m, d}, 1.0 / std::sqrt(static_cast<double>(d)), true);
  bank_.fusion_gate = Tensor::zeros({1}, true);
  encoder_ = init_attention(rng, d);
  score_.w1 = rng.normal_tensor({d, d}, kProjectionStd, true);
  score_.b1 = Tensor::zeros({d}, true);
  score_.w2 = rng.normal_tensor({d, 1}, kProjectionStd, true);
  score_.b2 = Tensor::zeros({1}, true);
  council_.attn = init_attention(rng, d);
  council_.ffn_w1 = rng.normal_tensor({d, 4 * d}, kProjectionStd, true);
  council_.ffn_b1 = Tensor::zeros({4 * d}, true);
  council_.ffn_w2 = rng.normal_tensor({4 * d, d}, kProjectionStd, true);
  council_.ffn_b2 = Tensor::zeros({d}, true);
  bank_.chunk_gate_w = rng.normal_tensor({d, 1}, kProjectionStd, true);
  bank_.chunk_gate_b = Tensor::zeros({1}, true);
}

void HubRouter::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != config_.d_model) {
    throw ContractError("HubRouter: input " + shape_str(x.shape()) + " does not have d_model=" +
                        std::to_string(config_.d_model) + " columns");
  }
  if (x.rows() == 0) throw ContractError("HubRouter: empty sequence");
}

Tensor HubRouter::encode(const Tensor& x) const {
  check_input(x);
  return add(bank_.hubs, multi_head_attention(bank_.hubs, x, encoder_, config_.n_heads));
}

Tensor HubRouter::chunk_gate(const Tensor& chunk) const {
  if (config_.shared_chunk_gate) return sigmoid(bank_.chunk_gate_b);
  const Tensor pooled = matmul(mean_rows(chunk), bank_.chunk_gate_w);  // 1 x 1
  return sigmoid(add(reshape(pooled, {1}), bank_.chunk_gate_b));
}

Tensor HubRouter::encode_chunk(const Tensor& hub_state, const Tensor& chunk) const {
  const Tensor update = multi_head_attention(hub_state, chunk, encoder_, config_.n_heads);
  return add(hub_state, scale_by(update, chunk_gate(chunk)));
}

Tensor HubRouter::decode(const Tensor& x, const Tensor& hubs_enriched) {
  if (x.cols() != hubs_enriched.cols()) {
    throw ShapeError("decode: token width " + shape_str(x.shape()) + " vs hubs " + shape_str(hubs_enriched.shape()));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const Tensor weights = softmax_lastdim(scale(matmul_nt(x, hubs_enriched), inv_sqrt));
  return matmul(weights, hubs_enriched);
}

Tensor HubRouter::score(const Tensor& fingerprints) const {
  const Tensor hidden = relu(add_bias(matmul(fingerprints, score_.w1), score_.b1));
  const Tensor s = add_bias(matmul(hidden, score_.w2), score_.b2);
  return reshape(s, {fingerprints.rows()});
}

Tensor HubRouter::council(const Tensor& x_sel, const SelectionSet& selection, bool causal) const {
  if (x_sel.rows() != selection.size()) {
    throw ContractError("council: " + std::to_string(x_sel.rows()) + " rows for a selection of " +
                        std::to_string(selection.size()));
  }
  if (selection.empty()) return Tensor::zeros({0, config_.d_model});
  if (!std::is_sorted(selection.indices.begin(), selection.indices.end())) {
    throw ContractError("council: selection positions must be sorted ascending");
  }
  const auto allowed = council_mask(selection, causal);
  const Tensor attn = multi_head_attention(x_sel, x_sel, council_.attn, config_.n_heads, causal ? &allowed : nullptr);
  const Tensor hidden = relu(add_bias(matmul(attn, council_.ffn_w1), council_.ffn_b1));
  const Tensor ffn = add_bias(matmul(hidden, council_.ffn_w2), council_.ffn_b2);
  return add(attn, ffn);
}

Tensor HubRouter::fuse(const Tensor& x, const Tensor& y_sel, const SelectionSet& selection,
                       const Tensor& scores) const {
  if (selection.empty()) return add_rows_at(x, selection.indices, Tensor::zeros({0, x.cols()}));
  Tensor residual = y_sel;
  if (config_.score_gate) {
    residual = scale_rows(residual, sigmoid(reshape(gather_rows(reshape(scores, {scores.numel(), 1}), selection.indices),
                                                    {selection.size()})));
  }
  residual = scale_by(residual, sigmoid(bank_.fusion_gate));
  return add_rows_at(x, selection.indices, residual);
}

RouterOutput HubRouter::forward(const Tensor& x) const {
  return config_.bidirectional() ? forward_bidirectional(x) : forward_chunked_causal(x);
}

RouterOutput HubRouter::forward_bidirectional(const Tensor& x) const {
  check_input(x);
  RouterOutput out;
  out.hubs_enriched = encode(x);
  out.fingerprints = decode(x, out.hubs_enriched);
  out.scores = score(out.fingerprints);
  out.selection = select_topk_with_neighbors(out.scores.data(), config_.top_k);
  const Tensor y = council(gather_rows(x, out.selection.indices), out.selection, config_.council_causal);
  out.output = fuse(x, y, out.selection, out.scores);
  out.ortho_loss = ortho_loss();
  return out;
}

RouterOutput HubRouter::forward_chunked_causal(const Tensor& x) const {
  check_input(x);
  if (!config_.chunk_size || *config_.chunk_size < 1) throw ConfigError("chunked forward needs chunk_size >= 1");
  const std::size_t n = x.rows();
  const std::size_t chunk = *config_.chunk_size;
  RouterOutput out;
  Tensor state = bank_.hubs;
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const Tensor xc = slice_rows(x, begin, std::min(n, begin + chunk));
    state = encode_chunk(state, xc);
    parts.push_back(decode(xc, state));
  }
  out.hubs_enriched = state;
  out.fingerprints = parts.size() == 1 ? parts[0] : concat_rows(parts);
  out.scores = score(out.fingerprints);
  out.selection = select_causal_threshold(out.scores.data(), config_.top_k);
  const Tensor y = council(gather_rows(x, out.selection.indices), out.selection, config_.council_causal);
  out.output = fuse(x, y, out.selection, out.scores);
  out.ortho_loss = ortho_loss();
  return out;
}

Tensor HubRouter::ortho_loss() const { return hubrouter::ortho_loss(bank_.hubs, config_.lambda_ortho); }

std::vector<NamedTensor> HubRouter::named_parameters() const {
  return {
      {"hub.H", bank_.hubs},
      {"hub.g", bank_.fusion_gate},
      {"enc.wq", encoder_.wq},
      {"enc.wk", encoder_.wk},
      {"enc.wv", encoder_.wv},
      {"enc.wo", encoder_.wo},
      {"score.w1", score_.w1},
      {"score.b1", score_.b1},
      {"score.w2", score_.w2},
      {"score.b2", score_.b2},
      {"council.wq", council_.attn.wq},
      {"council.wk", council_.attn.wk},
      {"council.wv", council_.attn.wv},
      {"council.wo", council_.attn.wo},
      {"council.ffn_w1", council_.ffn_w1},
      {"council.ffn_b1", council_.ffn_b1},
      {"council.ffn_w2", council_.ffn_w2},
      {"council.ffn_b2", council_.ffn_b2},
      {"chunkgate.w", bank_.chunk_gate_w},
      {"chunkgate.b", bank_.chunk_gate_b},
  };
}

std::vector<Tensor> HubRouter::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

}  // namespace hubrouter
