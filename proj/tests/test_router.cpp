#include <doctest.h>

#include <cmath>
#include <limits>

#include "hubrouter/bench.hpp"
#include "hubrouter/errors.hpp"
#include "hubrouter/router.hpp"
#include "test_util.hpp"

using namespace hubrouter;
using testing::bit_equal;
using testing::max_abs_diff;

namespace {

HubRouterConfig worked_example() {
  HubRouterConfig c;
  c.d_model = 64;
  c.n_hubs = 2;
  c.top_k = 4;
  return c;
}

HubRouterConfig tiny(std::size_t d, std::size_t m, std::size_t heads, std::size_t k = 4) {
  HubRouterConfig c;
  c.d_model = d;
  c.n_hubs = m;
  c.n_heads = heads;
  c.top_k = k;
  return c;
}

}  // namespace

TEST_CASE("worked example shapes") {
  RngStream rng(0);
  HubRouter router(worked_example(), rng);
  const Tensor x = rng.normal_tensor({8, 64}, 1.0);
  const auto out = router.forward(x);
  CHECK(out.hubs_enriched.shape() == Shape{2, 64});
  CHECK(out.fingerprints.shape() == Shape{8, 64});
  CHECK(out.scores.shape() == Shape{8});
  CHECK(out.selection.size() == 4);
  CHECK(council_mask(out.selection, true).size() == 16);
  CHECK(out.output.shape() == Shape{8, 64});
}

TEST_CASE("config validation") {
  HubRouterConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = HubRouterConfig{};
  c.top_k = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = HubRouterConfig{};
  c.chunk_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = HubRouterConfig{};
  c.n_hubs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("input width is checked") {
  RngStream rng(0);
  HubRouter router(tiny(8, 2, 2), rng);
  CHECK_THROWS_AS(router.forward(Tensor::zeros({4, 6})), ContractError);
  CHECK_THROWS_AS(router.forward(Tensor::zeros({0, 8})), ContractError);
}

TEST_CASE("encode is the identity on hubs when values vanish") {
  RngStream rng(1);
  HubRouter router(tiny(16, 3, 4), rng);
  NoGradGuard ng;
  const Tensor h1 = router.encode(Tensor::zeros({5, 16}));
  CHECK(max_abs_diff(h1.data(), router.bank().hubs.data()) == 0.0);
  for (double& v : router.encoder().wv.mutable_data()) v = 0.0;
  for (double& v : router.encoder().wo.mutable_data()) v = 0.0;
  const Tensor h2 = router.encode(rng.normal_tensor({5, 16}, 1.0));
  CHECK(max_abs_diff(h2.data(), router.bank().hubs.data()) == 0.0);
}

TEST_CASE("encode matches a hand computation for n=3, M=1, d=2, one head") {
  RngStream rng(2);
  HubRouter router(tiny(2, 1, 1, 2), rng);
  auto& e = router.encoder();
  e.wq = Tensor::from({2, 2}, {1, 0, 0, 1});
  e.wk = Tensor::from({2, 2}, {1, 0, 0, 1});
  e.wv = Tensor::from({2, 2}, {1, 0, 0, 1});
  e.wo = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor h = router.bank().hubs;
  h.mutable_data()[0] = 1.0;
  h.mutable_data()[1] = 0.0;
  const Tensor x = Tensor::from({3, 2}, {1, 0, 0, 1, 2, 2});
  // logits = [1, 0, 2] / sqrt(2)
  const double r = 1.0 / std::sqrt(2.0);
  const double e0 = std::exp(r), e1 = 1.0, e2 = std::exp(2 * r), z = e0 + e1 + e2;
  const double ax = (e0 * 1 + e1 * 0 + e2 * 2) / z, ay = (e0 * 0 + e1 * 1 + e2 * 2) / z;
  NoGradGuard ng;
  const Tensor out = router.encode(x);
  CHECK(out.at(0, 0) == doctest::Approx(1.0 + ax).epsilon(1e-14));
  CHECK(out.at(0, 1) == doctest::Approx(ay).epsilon(1e-14));
}

TEST_CASE("decode with one hub returns that hub everywhere") {
  RngStream rng(3);
  const Tensor hubs = rng.normal_tensor({1, 8}, 1.0);
  const Tensor x = rng.normal_tensor({5, 8}, 1.0);
  const Tensor f = HubRouter::decode(x, hubs);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(f.at(i, j) == doctest::Approx(hubs.at(0, j)).epsilon(1e-15));
}

TEST_CASE("decode matches hand-computed weights for n=2, M=2, d=2") {
  const Tensor hubs = Tensor::from({2, 2}, {1, 0, 0, 2});
  const Tensor x = Tensor::from({2, 2}, {1, 1, 0, -1});
  const Tensor f = HubRouter::decode(x, hubs);
  const double r = 1.0 / std::sqrt(2.0);
  // token 0 logits: [1, 2] r ; token 1 logits: [0, -2] r
  auto row = [&](double l0, double l1, std::size_t i) {
    const double p0 = std::exp(l0) / (std::exp(l0) + std::exp(l1)), p1 = 1 - p0;
    CHECK(f.at(i, 0) == doctest::Approx(p0 * 1.0).epsilon(1e-14));
    CHECK(f.at(i, 1) == doctest::Approx(p1 * 2.0).epsilon(1e-14));
  };
  row(r, 2 * r, 0);
  row(0.0, -2 * r, 1);
}

TEST_CASE("score head properties") {
  RngStream rng(4);
  HubRouter router(tiny(8, 2, 2), rng);
  testing::randomize(router, rng, 0.5);
  NoGradGuard ng;
  const Tensor row = rng.normal_tensor({1, 8}, 1.0);
  const Tensor same = concat_rows(std::vector<Tensor>{row, row, row});
  const Tensor s = router.score(same);
  CHECK(s.at(0) == s.at(1));
  CHECK(s.at(1) == s.at(2));
  for (double& v : router.score_head().b1.mutable_data()) v = 0.0;
  for (double& v : router.score_head().b2.mutable_data()) v = 0.0;
  const Tensor z = router.score(Tensor::zeros({4, 8}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("score head gradient") {
  RngStream rng(5);
  HubRouter router(tiny(8, 2, 2), rng);
  testing::randomize(router, rng, 0.5);
  const Tensor f = rng.normal_tensor({6, 8}, 1.0);
  auto& h = router.score_head();
  std::vector<Tensor> params = {h.w1, h.b1, h.w2, h.b2};
  const auto report = finite_diff_check([&] { return sum(router.score(f)); }, params);
  CHECK(report.passed(1e-6));
}

TEST_CASE("single-member causal council is the FFN residual of its own value path") {
  RngStream rng(6);
  HubRouter router(tiny(8, 2, 2), rng);
  testing::randomize(router, rng, 0.5);
  SelectionSet sel;
  sel.indices = {3};
  sel.scores = {0.0};
  const Tensor x = rng.normal_tensor({1, 8}, 1.0);
  NoGradGuard ng;
  const Tensor y = router.council(x, sel, true);
  const auto& w = router.council_weights();
  const Tensor a = matmul(matmul(x, w.attn.wv), w.attn.wo);
  const Tensor expected = add(a, add_bias(matmul(relu(add_bias(matmul(a, w.ffn_w1), w.ffn_b1)), w.ffn_w2), w.ffn_b2));
  CHECK(max_abs_diff(y.data(), expected.data()) < 1e-14);
}

TEST_CASE("causal council: perturbing the last member leaves earlier members unchanged") {
  RngStream rng(7);
  HubRouter router(tiny(8, 2, 2, 8), rng);
  testing::randomize(router, rng, 0.5);
  SelectionSet sel;
  sel.indices = {1, 2, 5, 6};
  sel.scores = {0, 0, 0, 0};
  const Tensor x = rng.normal_tensor({4, 8}, 1.0);
  Tensor x2 = x.detach();
  for (std::size_t j = 0; j < 8; ++j) x2.mutable_data()[3 * 8 + j] += 1.0;
  NoGradGuard ng;
  const Tensor y1 = router.council(x, sel, true), y2 = router.council(x2, sel, true);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(y1.at(i, j) == y2.at(i, j));
  const Tensor b1 = router.council(x, sel, false), b2 = router.council(x2, sel, false);
  CHECK(max_abs_diff(std::span(b1.data()).subspan(0, 8), std::span(b2.data()).subspan(0, 8)) > 0.0);
}

TEST_CASE("fuse rules") {
  RngStream rng(8);
  HubRouterConfig cfg = tiny(8, 2, 2);
  SUBCASE("closed gate leaves every row unchanged") {
    HubRouter router(cfg, rng);
    router.bank().fusion_gate.mutable_data()[0] = -std::numeric_limits<double>::infinity();
    const Tensor x = rng.normal_tensor({6, 8}, 1.0);
    const auto out = router.forward(x);
    CHECK(bit_equal(out.output.data(), x.data()));
  }
  SUBCASE("open gate at g=0 without score gating adds half the council output") {
    cfg.score_gate = false;
    HubRouter router(cfg, rng);
    testing::randomize(router, rng, 0.5);
    router.bank().fusion_gate.mutable_data()[0] = 0.0;
    const Tensor x = rng.normal_tensor({6, 8}, 1.0);
    NoGradGuard ng;
    const auto out = router.forward(x);
    const Tensor y = router.council(gather_rows(x, out.selection.indices), out.selection, cfg.council_causal);
    for (std::size_t r = 0; r < out.selection.size(); ++r) {
      const std::size_t i = out.selection.indices[r];
      for (std::size_t j = 0; j < 8; ++j) CHECK(out.output.at(i, j) - x.at(i, j) == doctest::Approx(0.5 * y.at(r, j)));
    }
  }
}

TEST_CASE("rows outside the selection are bit-identical in both modes") {
  RngStream rng(9);
  for (auto chunk : {std::optional<std::size_t>{}, std::optional<std::size_t>{1}, std::optional<std::size_t>{4}}) {
    HubRouterConfig cfg = tiny(16, 4, 4, 4);
    cfg.chunk_size = chunk;
    HubRouter router(cfg, rng);
    testing::randomize(router, rng, 0.5);
    for (int t = 0; t < 20; ++t) {
      const Tensor x = rng.normal_tensor({12, 16}, 1.0);
      const auto out = router.forward(x);
      for (std::size_t i = 0; i < 12; ++i) {
        if (out.selection.contains(i)) continue;
        CHECK(bit_equal(std::span(out.output.data()).subspan(i * 16, 16), std::span(x.data()).subspan(i * 16, 16)));
      }
    }
  }
}

TEST_CASE("single-token sequence") {
  RngStream rng(10);
  HubRouter router(tiny(8, 2, 2, 4), rng);
  const auto out = router.forward(rng.normal_tensor({1, 8}, 1.0));
  CHECK(out.selection.indices == std::vector<std::size_t>{0});
  CHECK(out.output.shape() == Shape{1, 8});
}

TEST_CASE("one chunk covering the sequence unrolls the recurrence once") {
  RngStream rng(11);
  HubRouterConfig cfg = tiny(8, 3, 2);
  cfg.chunk_size = 16;
  HubRouter router(cfg, rng);
  testing::randomize(router, rng, 0.5);
  const Tensor x = rng.normal_tensor({10, 8}, 1.0);
  NoGradGuard ng;
  const auto out = router.forward(x);
  const Tensor gate = router.chunk_gate(x);
  const Tensor expected =
      add(router.bank().hubs, scale_by(multi_head_attention(router.bank().hubs, x, router.encoder(), 2), gate));
  CHECK(max_abs_diff(out.hubs_enriched.data(), expected.data()) < 1e-15);
  double logit = router.bank().chunk_gate_b.item();
  for (std::size_t j = 0; j < 8; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 10; ++i) mean += x.at(i, j) / 10.0;
    logit += mean * router.bank().chunk_gate_w.at(j, 0);
  }
  const double g = 1.0 / (1.0 + std::exp(-logit));
  CHECK(gate.item() == doctest::Approx(g).epsilon(1e-14));
}

TEST_CASE("shared chunk gate ignores chunk content") {
  RngStream rng(12);
  HubRouterConfig cfg = tiny(8, 2, 2);
  cfg.chunk_size = 2;
  cfg.shared_chunk_gate = true;
  HubRouter router(cfg, rng);
  router.bank().chunk_gate_b.mutable_data()[0] = 0.3;
  NoGradGuard ng;
  const double a = router.chunk_gate(rng.normal_tensor({2, 8}, 1.0)).item();
  const double b = router.chunk_gate(rng.normal_tensor({2, 8}, 1.0)).item();
  CHECK(a == b);
  CHECK(a == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))));
}

TEST_CASE("chunked mode keeps earlier chunks independent of later tokens") {
  RngStream rng(13);
  HubRouterConfig cfg = tiny(8, 2, 2, 4);
  cfg.chunk_size = 4;
  HubRouter router(cfg, rng);
  testing::randomize(router, rng, 0.5);
  const Tensor x = rng.normal_tensor({16, 8}, 1.0);
  Tensor x2 = x.detach();
  for (std::size_t j = 0; j < 8; ++j) x2.mutable_data()[6 * 8 + j] = rng.normal();
  NoGradGuard ng;
  const auto a = router.forward(x), b = router.forward(x2);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(bit_equal(std::span(a.output.data()).subspan(i * 8, 8), std::span(b.output.data()).subspan(i * 8, 8)));
}

TEST_CASE("orthogonality penalty analytic values") {
  CHECK(ortho_loss(Tensor::identity(4), 0.01).item() == 0.0);
  const double r = 1.0 / std::sqrt(2.0);
  const Tensor dup = Tensor::from({2, 2}, {r, r, r, r});
  CHECK(std::abs(ortho_loss(dup, 1.0).item() - 2.0) < 1e-12);
  CHECK(std::abs(ortho_loss(dup, 0.01).item() - 0.02) < 1e-12);
  RngStream rng(14);
  Tensor h = rng.normal_tensor({3, 5}, 1.0, true);
  const auto report = finite_diff_check([&] { return ortho_loss(h, 0.01); }, std::span<Tensor>(&h, 1));
  CHECK(report.passed(1e-6));
}

TEST_CASE("end-to-end gradients in every mode") {
  HubRouterConfig cfg = tiny(16, 2, 4, 4);
  SUBCASE("bidirectional") { CHECK(testing::router_gradcheck(cfg, 8, 21).passed(1e-3)); }
  SUBCASE("chunked C=1") {
    cfg.chunk_size = 1;
    CHECK(testing::router_gradcheck(cfg, 8, 22).passed(1e-3));
  }
  SUBCASE("chunked C=4, shared gate") {
    cfg.chunk_size = 4;
    cfg.shared_chunk_gate = true;
    CHECK(testing::router_gradcheck(cfg, 8, 23).passed(1e-3));
  }
}

TEST_CASE("encode and council agree with element-wise attention") {
  RngStream rng(15);
  for (std::size_t d : {2, 4}) {
    for (std::size_t heads : {1, 2}) {
      for (std::size_t m : {1, 2}) {
        for (std::size_t n : {1, 2, 3, 4}) {
          HubRouter router(tiny(d, m, heads, 2), rng);
          testing::randomize(router, rng, 0.7);
          const Tensor x = rng.normal_tensor({n, d}, 1.0);
          NoGradGuard ng;
          const Tensor enc = router.encode(x);
          auto oracle = testing::brute_mha(testing::to_matrix(router.bank().hubs), testing::to_matrix(x),
                                           router.encoder(), heads);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
              CHECK(std::abs(enc.at(i, j) - (router.bank().hubs.at(i, j) + oracle[i][j])) < 1e-10);

          SelectionSet sel;
          for (std::size_t i = 0; i < n; ++i) sel.indices.push_back(2 * i + 1), sel.scores.push_back(0);
          for (bool causal : {false, true}) {
            const Tensor y = router.council(x, sel, causal);
            const auto mask = council_mask(sel, causal);
            const auto a = testing::brute_mha(testing::to_matrix(x), testing::to_matrix(x),
                                              router.council_weights().attn, heads, &mask);
            const auto& w = router.council_weights();
            const auto hidden = testing::mm(a, testing::to_matrix(w.ffn_w1));
            for (std::size_t i = 0; i < n; ++i) {
              std::vector<double> h(4 * d);
              for (std::size_t c = 0; c < 4 * d; ++c) h[c] = std::max(0.0, hidden[i][c] + w.ffn_b1.at(c));
              for (std::size_t j = 0; j < d; ++j) {
                double f = w.ffn_b2.at(j);
                for (std::size_t c = 0; c < 4 * d; ++c) f += h[c] * w.ffn_w2.at(c, j);
                CHECK(std::abs(y.at(i, j) - (a[i][j] + f)) < 1e-10);
              }
            }
          }
        }
      }
    }
  }
}

TEST_CASE("council over every position without a mask equals dense attention") {
  RngStream rng(16);
  HubRouter router(tiny(8, 2, 2, 4), rng);
  testing::randomize(router, rng, 0.5);
  const Tensor x = rng.normal_tensor({10, 8}, 1.0);
  SelectionSet all;
  for (std::size_t i = 0; i < 10; ++i) all.indices.push_back(i), all.scores.push_back(0);
  NoGradGuard ng;
  const Tensor c = router.council(x, all, false);
  const Tensor d = naive_attention_forward(x, router.council_weights(), 2);
  CHECK(max_abs_diff(c.data(), d.data()) < 1e-10);
}

TEST_CASE("parameter names are stable") {
  RngStream rng(17);
  HubRouter router(HubRouterConfig{}, rng);
  const auto params = router.named_parameters();
  CHECK(params.front().name == "hub.H");
  CHECK(params.front().tensor.shape() == Shape{16, 64});
  CHECK(params.size() == 20);
}
