#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "hubrouter/errors.hpp"
#include "hubrouter/gradcheck.hpp"
#include "hubrouter/optim.hpp"
#include "hubrouter/rng.hpp"
#include "hubrouter/tensor.hpp"
#include "test_util.hpp"

using namespace hubrouter;

namespace {

Tensor rand_t(RngStream& rng, Shape s, bool grad = true) { return rng.normal_tensor(std::move(s), 1.0, grad); }

// Contracts an op's output against a fixed random weight so every output
// element contributes to the scalar being checked.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  RngStream rng(seed);
  const Tensor w = rng.normal_tensor(y.shape(), 1.0);
  return sum(mul(y, w));
}

void expect_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> params, double tol = 1e-6) {
  const auto report = finite_diff_check(f, params);
  CAPTURE(report.max_rel_error);
  CAPTURE(report.worst_param);
  CAPTURE(report.worst_index);
  CHECK(report.passed(tol));
}

}  // namespace

TEST_CASE("matmul hand examples") {
  const Tensor i2 = Tensor::identity(2);
  const Tensor b = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor ib = matmul(i2, b);
  CHECK(testing::bit_equal(ib.data(), b.data()));

  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::from({2, 1}, {1, 1});
  const Tensor y = matmul(a, ones);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.at(0, 0) == 3.0);
  CHECK(y.at(1, 0) == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({3, 4});
  const Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3, 4]") != std::string::npos);
    CHECK(msg.find("[5, 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  RngStream rng(1);
  Tensor a = rand_t(rng, {3, 4}), b = rand_t(rng, {4, 2});
  expect_gradcheck([&] { return weighted_sum(matmul(a, b), 11); }, {a, b});
  Tensor c = rand_t(rng, {5, 4});
  expect_gradcheck([&] { return weighted_sum(matmul_nt(a, c), 12); }, {a, c});
}

TEST_CASE("softmax examples") {
  const Tensor z = softmax_lastdim(Tensor::from({1, 3}, {0, 0, 0}));
  for (int j = 0; j < 3; ++j) CHECK(z.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor one = softmax_lastdim(Tensor::from({1, 1}, {42.5}));
  CHECK(one.at(0, 0) == 1.0);
  RngStream rng(2);
  Tensor x = rand_t(rng, {2, 5});
  expect_gradcheck([&] { return weighted_sum(softmax_lastdim(x), 3); }, {x});
  expect_gradcheck([&] { return weighted_sum(log_softmax_lastdim(x), 4); }, {x});
}

TEST_CASE("masked softmax zeroes disallowed entries and fully masked rows") {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor p = masked_softmax_lastdim(x, {1, 0, 1, 0, 0, 0});
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(0, 0) + p.at(0, 2) == doctest::Approx(1.0));
  for (int j = 0; j < 3; ++j) CHECK(p.at(1, j) == 0.0);
  RngStream rng(3);
  Tensor y = rand_t(rng, {3, 4});
  const std::vector<std::uint8_t> mask = {1, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1};
  expect_gradcheck([&] { return weighted_sum(masked_softmax_lastdim(y, mask), 5); }, {y});
}

TEST_CASE("backward analytic cases") {
  RngStream rng(4);
  Tensor w = rand_t(rng, {3, 2});
  sum(w).backward();
  for (double g : w.grad()) CHECK(g == 1.0);
  w.zero_grad();
  scale(sum(mul(w, w)), 0.5).backward();
  CHECK(testing::max_abs_diff(w.grad(), w.data()) < 1e-15);
}

TEST_CASE("backward requires a scalar") {
  Tensor w = Tensor::zeros({2, 2}, true);
  CHECK_THROWS_AS(w.backward(), ContractError);
}

TEST_CASE("gradients accumulate until zero_grad") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  sum(w).backward();
  sum(w).backward();
  CHECK(w.grad()[0] == 2.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("elementwise and plumbing ops pass finite-difference checks") {
  RngStream rng(5);
  Tensor a = rand_t(rng, {4, 3}), b = rand_t(rng, {4, 3}), bias = rand_t(rng, {3}), s = rand_t(rng, {4}),
         c = rand_t(rng, {1});
  expect_gradcheck([&] { return weighted_sum(add(a, b), 1); }, {a, b});
  expect_gradcheck([&] { return weighted_sum(sub(a, b), 2); }, {a, b});
  expect_gradcheck([&] { return weighted_sum(mul(a, b), 3); }, {a, b});
  expect_gradcheck([&] { return weighted_sum(scale(a, -1.7), 4); }, {a});
  expect_gradcheck([&] { return weighted_sum(add_bias(a, bias), 5); }, {a, bias});
  expect_gradcheck([&] { return weighted_sum(scale_rows(a, s), 6); }, {a, s});
  expect_gradcheck([&] { return weighted_sum(scale_by(a, c), 7); }, {a, c});
  expect_gradcheck([&] { return weighted_sum(sigmoid(a), 8); }, {a});
  expect_gradcheck([&] { return weighted_sum(relu(add(a, Tensor::full({4, 3}, 0.05))), 9); }, {a});
  expect_gradcheck([&] { return weighted_sum(mean_rows(a), 10); }, {a});
  expect_gradcheck([&] { return weighted_sum(reshape(a, {3, 4}), 11); }, {a});
  expect_gradcheck([&] { return mul(pick(a, 5), pick(a, 7)); }, {a});
  const std::vector<std::size_t> rows = {2, 0, 2};
  expect_gradcheck([&] { return weighted_sum(gather_rows(a, rows), 12); }, {a});
  const std::vector<std::size_t> dest = {3, 1, 0, 5};
  expect_gradcheck([&] { return weighted_sum(scatter_rows(a, dest, 6), 13); }, {a});
  Tensor src = rand_t(rng, {2, 3});
  const std::vector<std::size_t> at = {3, 1};
  expect_gradcheck([&] { return weighted_sum(add_rows_at(a, at, src), 14); }, {a, src});
  expect_gradcheck([&] { return weighted_sum(concat_rows(std::vector<Tensor>{a, b}), 15); }, {a, b});
  expect_gradcheck([&] { return weighted_sum(concat_cols(std::vector<Tensor>{a, b}), 16); }, {a, b});
  expect_gradcheck([&] { return weighted_sum(slice_rows(a, 1, 3), 17); }, {a});
  expect_gradcheck([&] { return weighted_sum(slice_cols(a, 1, 3), 18); }, {a});
}

TEST_CASE("add_rows_at copies untouched rows bit for bit") {
  RngStream rng(6);
  const Tensor x = rand_t(rng, {5, 3}, false);
  const Tensor src = rand_t(rng, {2, 3}, false);
  const std::vector<std::size_t> rows = {1, 4};
  const Tensor y = add_rows_at(x, rows, src);
  for (std::size_t i : {0u, 2u, 3u})
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::memcmp(&x.data()[i * 3 + j], &y.data()[i * 3 + j], 8) == 0);
  CHECK(y.at(1, 0) == x.at(1, 0) + src.at(0, 0));
}

TEST_CASE("no-grad mode records nothing") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(mul(w, w));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("finite checks flag the op that produced a non-finite value") {
  set_finite_checks(true);
  const Tensor big = Tensor::from({1, 1}, {std::numeric_limits<double>::max()});
  try {
    add(big, big);
    set_finite_checks(false);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    set_finite_checks(false);
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("gradcheck on a quadratic bowl") {
  Tensor p = Tensor::from({3}, {0.3, -1.2, 2.0}, true);
  const auto report = finite_diff_check([&] { return sum(mul(p, p)); }, std::span<Tensor>(&p, 1));
  CHECK(report.max_rel_error < 1e-8);
  CHECK(report.coordinates_checked == 3);
}

TEST_CASE("gradcheck on a softmax-matmul chain") {
  RngStream rng(8);
  Tensor a = rand_t(rng, {3, 4}), b = rand_t(rng, {4, 5});
  std::vector<Tensor> params = {a, b};
  const auto report =
      finite_diff_check([&] { return weighted_sum(softmax_lastdim(matmul(a, b)), 21); }, params);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("gradcheck flags a corrupted coordinate") {
  RngStream rng(9);
  Tensor a = rand_t(rng, {2, 3});
  std::vector<Tensor> params = {a};
  auto loss = [&] { return weighted_sum(sigmoid(a), 22); };
  loss().backward();
  std::vector<std::vector<double>> grads = {std::vector<double>(a.grad().begin(), a.grad().end())};
  grads[0][4] += 0.1;
  const auto report = finite_diff_check([&] { return loss().item(); }, params, grads);
  CHECK_FALSE(report.passed(1e-6));
  CHECK(report.worst_param == 0);
  CHECK(report.worst_index == 4);
}

TEST_CASE("relative error uses the floor for tiny gradients") {
  CHECK(relative_error(0.0, 0.0, 1e-6) == 0.0);
  CHECK(relative_error(1e-9, 0.0, 1e-6) == doctest::Approx(1e-3));
  CHECK(relative_error(2.0, 1.0, 1e-6) == doctest::Approx(0.5));
}

TEST_CASE("AdamW contract examples") {
  SUBCASE("zero gradient and no decay leaves parameters unchanged") {
    Tensor p = Tensor::from({2}, {1.5, -2.0}, true);
    p.mutable_grad();
    AdamWOptions o;
    o.weight_decay = 0.0;
    AdamWState st(o);
    std::vector<Tensor> ps = {p};
    for (int i = 0; i < 3; ++i) adamw_step(ps, st);
    CHECK(p.at(0) == 1.5);
    CHECK(p.at(1) == -2.0);
  }
  SUBCASE("positive gradient decreases the parameter") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    sum(p).backward();
    AdamWOptions o;
    o.lr = 0.1;
    o.weight_decay = 0.0;
    AdamWState st(o);
    std::vector<Tensor> ps = {p};
    adamw_step(ps, st);
    CHECK(p.at(0) < 1.0);
  }
  SUBCASE("200 steps reach the optimum of a convex quadratic") {
    const std::vector<double> target = {0.5, -1.0, 2.0};
    Tensor p = Tensor::zeros({3}, true);
    const Tensor t = Tensor::from({3}, target);
    AdamWOptions o;
    o.lr = 0.05;
    o.weight_decay = 0.0;
    AdamWState st(o);
    std::vector<Tensor> ps = {p};
    double loss = 0;
    for (int i = 0; i < 200; ++i) {
      zero_grads(ps);
      const Tensor diff = sub(p, t);
      const Tensor l = sum(mul(diff, diff));
      loss = l.item();
      l.backward();
      adamw_step(ps, st);
    }
    CHECK(loss < 1e-3);
  }
  SUBCASE("weight decay is decoupled") {
    Tensor p = Tensor::from({1}, {2.0}, true);
    p.mutable_grad();
    AdamWOptions o;
    o.lr = 0.1;
    o.weight_decay = 0.5;
    AdamWState st(o);
    std::vector<Tensor> ps = {p};
    adamw_step(ps, st);
    CHECK(p.at(0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }
}
