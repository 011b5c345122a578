#pragma once
// Dense row-major f64 tensors (rank 1-3) with tape-style reverse-mode autodiff.
//
// Every op records its inputs and a backward closure on the result while
// grad mode is on and at least one input requires a gradient. backward() on a
// scalar walks that graph once, accumulates into every reachable tensor that
// requires a gradient, and then drops the recorded closures so the graph is
// freed. Leaf gradients accumulate across calls until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hubrouter {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Leading and trailing extents of a rank-2 tensor (rank 1 is treated as 1 x n).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  // Empty until a backward pass has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Populates gradients of every requires_grad tensor reachable from this
  // scalar, then releases the recorded graph.
  void backward() const;

  // Same values, no graph, no gradient.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Debug mode: every op result is checked for NaN/Inf and a ContractError
// naming the op is thrown on the first non-finite value.
void set_finite_checks(bool on);
bool finite_checks();

Tensor matmul(const Tensor& a, const Tensor& b);     // a[p x q] * b[q x r]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[p x q] * b[r x q]^T

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_bias(const Tensor& a, const Tensor& bias);  // bias has a.cols() elements
Tensor scale_rows(const Tensor& a, const Tensor& s);   // row i times s[i]
Tensor scale_by(const Tensor& a, const Tensor& s);     // every element times scalar s
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor softmax_lastdim(const Tensor& a);
// allowed has a.numel() entries; disallowed positions get probability 0.
// A row with nothing allowed yields all zeros.
Tensor masked_softmax_lastdim(const Tensor& a, const std::vector<std::uint8_t>& allowed);
Tensor log_softmax_lastdim(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [r x c] -> [1 x c]
Tensor pick(const Tensor& a, std::size_t flat_index);

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Zero [n x c] matrix with row idx[i] set to a's row i. idx must be distinct.
Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> idx, std::size_t n);
// Copy of x with src row i added to row rows[i]; other rows are copied
// bit-for-bit. rows must be distinct.
Tensor add_rows_at(const Tensor& x, std::span<const std::size_t> rows, const Tensor& src);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);

}  // namespace hubrouter
