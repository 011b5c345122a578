#include "hubrouter/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "hubrouter/errors.hpp"
#include "hubrouter/kernels.hpp"

namespace hubrouter {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;
bool g_finite_checks = false;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

void check_finite(const Node& node, const char* op) {
  for (double v : node.data) {
    if (!std::isfinite(v)) {
      throw ContractError(std::string(op) + ": non-finite value in result of shape " +
                          shape_str(node.shape));
    }
  }
}

// Wraps a computed value; attaches parents and the backward closure only if
// the result will need a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> backward) {
  auto node = new_node(std::move(shape), std::move(data));
  if (g_finite_checks) check_finite(*node, op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (shape.empty() || shape.size() > 3) {
    throw ShapeError("tensor rank must be 1-3, got " + shape_str(shape));
  }
  const std::size_t n = shape_numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || shape.size() > 3) {
    throw ShapeError("tensor rank must be 1-3, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::size_t Tensor::rows() const { return rank() == 1 ? 1 : shape()[0]; }
std::size_t Tensor::cols() const { return last_dim(shape()); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }
double Tensor::at(std::size_t i, std::size_t j) const { return node_->data.at(i * cols() + j); }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data)); }

void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward(): loss must be a scalar, got shape " +
                        (defined() ? shape_str(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) node->backward(*node);
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
  if (b.shape()[0] != q) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(p * r);
  kernels::active().gemm_nn(a.data().data(), b.data().data(), out.data(), p, q, r, false);
  return make_result("matmul", {p, r}, std::move(out), {a.node(), b.node()}, [p, q, r](Node& self) {
    const auto& k = kernels::active();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) k.gemm_nt(self.grad.data(), nb.data.data(), na.grad_buffer().data(), p, r, q, true);
    if (nb.requires_grad) k.gemm_tn(na.data.data(), self.grad.data(), nb.grad_buffer().data(), q, p, r, true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[0];
  if (b.shape()[1] != q) {
    throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(p * r);
  kernels::active().gemm_nt(a.data().data(), b.data().data(), out.data(), p, q, r, false);
  return make_result("matmul_nt", {p, r}, std::move(out), {a.node(), b.node()}, [p, q, r](Node& self) {
    const auto& k = kernels::active();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) k.gemm_nn(self.grad.data(), nb.data.data(), na.grad_buffer().data(), p, r, q, true);
    if (nb.requires_grad) k.gemm_tn(self.grad.data(), na.data.data(), nb.grad_buffer().data(), r, p, q, true);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int s = 0; s < 2; ++s) {
      Node& p = *self.parents[s];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  return make_result("scale", a.shape(), std::move(out), {a.node()}, [c](Node& self) {
    kernels::active().axpy(c, self.grad.data(), self.parents[0]->grad_buffer().data(), self.grad.size());
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.numel() != c) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bd[j];
  return make_result("add_bias", a.shape(), std::move(out), {a.node(), bias.node()}, [r, c](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  const std::size_t r = a.rows(), c = a.cols();
  if (s.numel() != r) {
    throw ShapeError("scale_rows: scales " + shape_str(s.shape()) + " do not match rows of " + shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto sd = s.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = ad[i * c + j] * sd[i];
  return make_result("scale_rows", a.shape(), std::move(out), {a.node(), s.node()}, [r, c](Node& self) {
    Node& na = *self.parents[0];
    Node& ns = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * ns.data[i];
    }
    if (ns.requires_grad) {
      auto& g = ns.grad_buffer();
      const auto& k = kernels::active();
      for (std::size_t i = 0; i < r; ++i) g[i] += k.dot(self.grad.data() + i * c, na.data.data() + i * c, c);
    }
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: factor must be a scalar, got " + shape_str(s.shape()));
  const double f = s.data()[0];
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= f;
  return make_result("scale_by", a.shape(), std::move(out), {a.node(), s.node()}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& ns = *self.parents[1];
    const auto& k = kernels::active();
    if (na.requires_grad) k.axpy(ns.data[0], self.grad.data(), na.grad_buffer().data(), self.grad.size());
    if (ns.requires_grad) ns.grad_buffer()[0] += k.dot(self.grad.data(), na.data.data(), self.grad.size());
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.empty() || shape.size() > 3 || shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& na = *self.parents[0];
    auto& g = na.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (na.data[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ad[i]));
  return make_result("sigmoid", a.shape(), std::move(out), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisations and reductions

namespace {

void softmax_backward(Node& self) {
  const std::size_t c = last_dim(self.shape);
  const std::size_t r = self.data.size() / c;
  auto& g = self.parents[0]->grad_buffer();
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < r; ++i) {
    const double* y = self.data.data() + i * c;
    const double* dy = self.grad.data() + i * c;
    const double inner = k.dot(y, dy, c);
    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - inner);
  }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& a) {
  const std::size_t c = a.cols();
  if (c == 0) throw ShapeError("softmax_lastdim: empty last dimension");
  std::vector<double> out(a.data().begin(), a.data().end());
  kernels::active().softmax_rows(out.data(), out.size() / c, c);
  return make_result("softmax_lastdim", a.shape(), std::move(out), {a.node()}, softmax_backward);
}

Tensor masked_softmax_lastdim(const Tensor& a, const std::vector<std::uint8_t>& allowed) {
  if (allowed.size() != a.numel()) {
    throw ShapeError("masked_softmax_lastdim: mask has " + std::to_string(allowed.size()) +
                     " entries for tensor " + shape_str(a.shape()));
  }
  const std::size_t c = a.cols();
  if (c == 0) throw ShapeError("masked_softmax_lastdim: empty last dimension");
  const std::size_t r = a.numel() / c;
  std::vector<double> out(a.data().begin(), a.data().end());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!allowed[i]) out[i] = neg_inf;
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    const bool any = std::any_of(allowed.begin() + i * c, allowed.begin() + (i + 1) * c,
                                 [](std::uint8_t m) { return m != 0; });
    if (any) {
      kernels::active().softmax_rows(row, 1, c);
    } else {
      std::fill(row, row + c, 0.0);
    }
  }
  return make_result("masked_softmax_lastdim", a.shape(), std::move(out), {a.node()}, softmax_backward);
}

Tensor log_softmax_lastdim(const Tensor& a) {
  const std::size_t c = a.cols();
  if (c == 0) throw ShapeError("log_softmax_lastdim: empty last dimension");
  const std::size_t r = a.numel() / c;
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  return make_result("log_softmax_lastdim", a.shape(), std::move(out), {a.node()}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += self.grad[i * c + j] - std::exp(self.data[i * c + j]) * total;
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw ShapeError("mean_rows: no rows in " + shape_str(a.shape()));
  std::vector<double> out(c, 0.0);
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
  for (double& v : out) v /= static_cast<double>(r);
  return make_result("mean_rows", {1, c}, std::move(out), {a.node()}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) {
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " + shape_str(a.shape()));
  }
  return make_result("pick", {1}, {a.data()[flat_index]}, {a.node()}, [flat_index](Node& self) {
    self.parents[0]->grad_buffer()[flat_index] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Row/column plumbing

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank2(a, "gather_rows");
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * c);
  const auto ad = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ShapeError("gather_rows: row " + std::to_string(idx[i]) + " out of range for " + shape_str(a.shape()));
    std::copy_n(ad.begin() + idx[i] * c, c, out.begin() + i * c);
  }
  return make_result("gather_rows", {idx.size(), c}, std::move(out), {a.node()}, [idx, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> rows, std::size_t n) {
  require_rank2(a, "scatter_rows");
  const std::size_t c = a.cols();
  if (rows.size() != a.rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(rows.size()) + " indices for " + shape_str(a.shape()));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(n * c, 0.0);
  const auto ad = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ShapeError("scatter_rows: row " + std::to_string(idx[i]) + " out of range " + std::to_string(n));
    std::copy_n(ad.begin() + i * c, c, out.begin() + idx[i] * c);
  }
  return make_result("scatter_rows", {n, c}, std::move(out), {a.node()}, [idx, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[idx[i] * c + j];
  });
}

Tensor add_rows_at(const Tensor& x, std::span<const std::size_t> rows, const Tensor& src) {
  require_rank2(x, "add_rows_at");
  require_rank2(src, "add_rows_at");
  const std::size_t n = x.rows(), c = x.cols();
  if (src.cols() != c || src.rows() != rows.size()) {
    throw ShapeError("add_rows_at: " + shape_str(src.shape()) + " rows with " + std::to_string(rows.size()) +
                     " indices into " + shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto sd = src.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ShapeError("add_rows_at: row " + std::to_string(idx[i]) + " out of range for " + shape_str(x.shape()));
    for (std::size_t j = 0; j < c; ++j) out[idx[i] * c + j] += sd[i * c + j];
  }
  return make_result("add_rows_at", x.shape(), std::move(out), {x.node(), src.node()}, [idx, c](Node& self) {
    Node& nx = *self.parents[0];
    Node& ns = *self.parents[1];
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ns.requires_grad) {
      auto& g = ns.grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[idx[i] * c + j];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result("concat_rows", {total, c}, std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  return make_result("slice_rows", {end - begin, c}, std::move(out), {a.node()}, [begin, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  if (begin > end || end > c) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(ad.begin() + i * c + begin, w, out.begin() + i * w);
  return make_result("slice_cols", {r, w}, std::move(out), {a.node()}, [r, c, w, begin](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pd.begin() + i * w, w, out.begin() + i * total + offset);
    offset += w;
  }
  return make_result("concat_cols", {r, total}, std::move(out), std::move(parents), [r, total](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t w = p->shape[1];
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + offset + j];
      }
      offset += w;
    }
  });
}

}  // namespace hubrouter
