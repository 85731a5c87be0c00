#pragma once

// Tape-free reverse-mode autodiff over rank-2 tensors.
//
// Every op returns a `Var` holding its forward value plus a closure that
// scatters the incoming gradient into its parents. `Var::backward()` walks the
// graph in reverse topological order. Graphs are rebuilt for every forward
// pass; parameter leaves persist in a ParamStore and accumulate gradients until
// cleared.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "imvc/tensor.hpp"

namespace imvc {

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool retain_grad = false;  // keep the gradient of an intermediate after backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  /// Gradient accumulated so far; zeros of the value's shape if none.
  Tensor grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Keep this intermediate's gradient after backward() for inspection.
  void retain_grad() { node_->retain_grad = true; }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  /// Convenience for 1x1 results.
  double item() const;

  /// Seeds d(this)/d(this) = 1 (this must be 1x1) and back-propagates.
  void backward() const;
  /// Back-propagates an explicit upstream gradient.
  void backward(const Tensor& upstream) const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
};

/// Builds an op node. `backward` reads node.grad and accumulates into parents.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

Var constant(Tensor t);

namespace ag {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a (n x c) + bias (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& bias);
/// a (n x c) * w (n x 1) broadcast over columns.
Var mul_col(const Var& a, const Var& w);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& a);
Var gelu(const Var& a);
Var exp(const Var& a);
/// Natural log; inputs must be strictly positive.
Var log(const Var& a);
/// x log x with 0 log 0 = 0.
Var xlogx(const Var& a);
Var square(const Var& a);

/// Sum of all entries, 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sums, n x 1.
Var row_sum(const Var& a);
/// Per-column means, 1 x c.
Var col_mean(const Var& a);

Var softmax_rows(const Var& a);
/// Each row divided by its norm. A zero row stays zero.
Var l2_normalize_rows(const Var& a);

/// Same payload, new rank-2 shape.
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

/// Per-group scaled dot-product attention. Q is (g*h) x d, K and V are (g*m) x d;
/// group i attends from its h query rows to its m key rows. Returns (g*h) x d.
Var grouped_attention(const Var& q, const Var& k, const Var& v, std::size_t h, std::size_t m);

}  // namespace ag

inline Var operator+(const Var& a, const Var& b) { return ag::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ag::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ag::mul(a, b); }
inline Var operator*(double s, const Var& a) { return ag::scale(a, s); }

/// While alive on this thread, ops record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws NumericError naming `what` if any entry of v is NaN or Inf.
void require_finite(const Tensor& v, const std::string& what);

/// Count of zero rows seen by l2_normalize_rows since process start.
std::size_t degenerate_row_count();

}  // namespace imvc
