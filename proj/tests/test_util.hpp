#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <span>
#include <cstddef>
#include <vector>

#include "hubrouter/rng.hpp"
#include "hubrouter/router.hpp"
#include "hubrouter/tensor.hpp"

namespace hubrouter::testing {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

// Overwrites every router parameter with N(0, std) so scores, gates and
// projections are far from the tiny init values.
inline void randomize(HubRouter& router, RngStream& rng, double std) {
  for (auto& p : router.named_parameters()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = rng.normal(0.0, std);
  }
}

// Exhaustive definition: j is a winner iff fewer than k/2 positions beat it,
// where i beats j when s_i > s_j or (s_i == s_j and i < j).
inline std::vector<std::size_t> brute_force_selection(const std::vector<double>& s, std::size_t k) {
  std::set<std::size_t> out;
  const std::size_t n = s.size();
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t better = 0;
    for (std::size_t i = 0; i < n; ++i) better += s[i] > s[j] || (s[i] == s[j] && i < j);
    if (better < k / 2) {
      out.insert(j);
      if (j + 1 < n) out.insert(j + 1);
    }
  }
  return {out.begin(), out.end()};
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Element-by-element multi-head attention with an optional q x kv mask.
inline Matrix brute_mha(const Matrix& q_in, const Matrix& kv_in, const AttentionWeights& w, std::size_t heads,
                        const std::vector<std::uint8_t>* allowed = nullptr) {
  const Matrix q = mm(q_in, to_matrix(w.wq)), k = mm(kv_in, to_matrix(w.wk)), v = mm(kv_in, to_matrix(w.wv));
  const std::size_t d = q[0].size(), hd = d / heads, nq = q.size(), nk = k.size();
  Matrix merged(nq, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> logits(nk);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) s += q[i][c] * k[j][c];
        logits[j] = s / std::sqrt(static_cast<double>(hd));
        if (!allowed || (*allowed)[i * nk + j]) mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      std::vector<double> p(nk, 0.0);
      for (std::size_t j = 0; j < nk; ++j) {
        if (allowed && !(*allowed)[i * nk + j]) continue;
        p[j] = std::exp(logits[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < nk; ++j)
        for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) merged[i][c] += p[j] / z * v[j][c];
    }
  }
  return mm(merged, to_matrix(w.wo));
}

}  // namespace hubrouter::testing

#include "hubrouter/gradcheck.hpp"

namespace hubrouter::testing {

// End-to-end finite-difference check of one router forward: the loss is a
// fixed random contraction of the output plus the orthogonality penalty, and
// every parameter (hubs, gates, projections, chunk gates) is checked.
inline GradCheckReport router_gradcheck(const HubRouterConfig& cfg, std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  HubRouter router(cfg, rng);
  randomize(router, rng, 0.5);
  const Tensor x = rng.normal_tensor({n, cfg.d_model}, 1.0);
  const Tensor w = rng.normal_tensor({n, cfg.d_model}, 1.0);
  auto params = router.parameters();
  return finite_diff_check(
      [&] {
        const auto out = router.forward(x);
        return add(sum(mul(out.output, w)), out.ortho_loss);
      },
      params);
}

}  // namespace hubrouter::testing
