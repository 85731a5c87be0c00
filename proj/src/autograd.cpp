#include "imvc/autograd.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "imvc/error.hpp"
#include "imvc/kernels.hpp"

namespace imvc {

namespace {

std::atomic<std::size_t> g_degenerate_rows{0};
thread_local bool t_grad_enabled = true;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

double Var::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + node_->value.shape_str());
  return node_->value[0];
}

void Var::backward() const {
  if (node_->value.size() != 1) throw ShapeError("backward() without upstream needs a scalar");
  backward(Tensor(node_->value.shape(), 1.0));
}

void Var::backward(const Tensor& upstream) const {
  require_same(node_->value, upstream, "backward");
  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(upstream);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Intermediate grads are released so a graph can be back-propagated once per build.
  for (Node* n : order) {
    if (n->backward && !n->retain_grad) n->grad = Tensor();
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!t_grad_enabled) return out;
  for (const auto& p : parents) {
    if (p.requires_grad()) out.node_->requires_grad = true;
    out.node_->parents.push_back(p.node());
  }
  if (out.node_->requires_grad) out.node_->backward = std::move(backward);
  return out;
}

Var constant(Tensor t) { return Var(std::move(t), false); }

void require_finite(const Tensor& v, const std::string& what) {
  if (!v.all_finite()) throw NumericError("non-finite values in " + what);
}

std::size_t degenerate_row_count() { return g_degenerate_rows.load(); }

namespace ag {

namespace {
Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }
}  // namespace

Var matmul(const Var& a, const Var& b) {
  return make_op(kernels::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(kernels::matmul_nt(n.grad, pb.value));
    if (pb.requires_grad) pb.accumulate(kernels::matmul_tn(pa.value, n.grad));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  return make_op(kernels::matmul_nt(a.value(), b.value()), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(kernels::matmul(n.grad, pb.value));
    if (pb.requires_grad) pb.accumulate(kernels::matmul_tn(n.grad, pa.value));
  });
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor g = Tensor::matrix(n.grad.cols(), n.grad.rows());
    for (std::size_t i = 0; i < n.grad.rows(); ++i)
      for (std::size_t j = 0; j < n.grad.cols(); ++j) g(j, i) = n.grad(i, j);
    parent(n, 0).accumulate(g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    parent(n, 1).accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(map(n.grad, [](double g) { return -g; }));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pb.value[i];
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pa.value[i];
      pb.accumulate(g);
    }
  });
}

Var add_row(const Var& a, const Var& bias) {
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.size() != x.cols()) throw ShapeError("add_row: bias " + b.shape_str() + " vs input " + x.shape_str());
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += b[j];
  return make_op(std::move(out), {a, bias}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    Node& pb = parent(n, 1);
    if (pb.requires_grad) {
      Tensor g(pb.value.shape(), 0.0);
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) g[j] += n.grad(i, j);
      pb.accumulate(g);
    }
  });
}

Var mul_col(const Var& a, const Var& w) {
  const Tensor& x = a.value();
  if (w.value().size() != x.rows()) throw ShapeError("mul_col: weights " + w.value().shape_str() + " vs input " + x.shape_str());
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= w.value()[i];
  return make_op(std::move(out), {a, w}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pw = parent(n, 1);
    if (pa.requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= pw.value[i];
      pa.accumulate(g);
    }
    if (pw.requires_grad) {
      Tensor g(pw.value.shape(), 0.0);
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) g[i] += n.grad(i, j) * pa.value(i, j);
      pw.accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  return make_op(map(a.value(), [s](double x) { return s * x; }), {a},
                 [s](Node& n) { parent(n, 0).accumulate(map(n.grad, [s](double g) { return s * g; })); });
}

Var add_scalar(const Var& a, double s) {
  return make_op(map(a.value(), [s](double x) { return x + s; }), {a},
                 [](Node& n) { parent(n, 0).accumulate(n.grad); });
}

Var relu(const Var& a) {
  return make_op(map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(p.value[i] > 0.0)) g[i] = 0.0;
    p.accumulate(g);
  });
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Var gelu(const Var& a) {
  Tensor out = map(a.value(), [](double x) {
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
  });
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      const double t = std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x));
      const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
      g[i] *= 0.5 * (1.0 + t) + 0.5 * x * dt;
    }
    p.accumulate(g);
  });
}

Var exp(const Var& a) {
  return make_op(map(a.value(), [](double x) { return std::exp(x); }), {a}, [](Node& n) {
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= n.value[i];
    parent(n, 0).accumulate(g);
  });
}

Var log(const Var& a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw NumericError("log of non-positive value");
  }
  return make_op(map(a.value(), [](double x) { return std::log(x); }), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= p.value[i];
    p.accumulate(g);
  });
}

Var xlogx(const Var& a) {
  for (double x : a.value().data()) {
    if (x < 0.0) throw NumericError("xlogx of negative value");
  }
  return make_op(map(a.value(), [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; }), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g = n.grad;
    // the derivative diverges at 0; treat it as 0 there like the value
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= p.value[i] > 0.0 ? std::log(p.value[i]) + 1.0 : 0.0;
    p.accumulate(g);
  });
}

Var square(const Var& a) {
  return make_op(map(a.value(), [](double x) { return x * x; }), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 2.0 * p.value[i];
    p.accumulate(g);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(Tensor(p.value.shape(), n.grad[0]));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / count);
}

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    out[i] = s;
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor g(p.value.shape());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = n.grad[i];
    p.accumulate(g);
  });
}

Var col_mean(const Var& a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) throw ShapeError("col_mean of empty tensor");
  Tensor out = Tensor::matrix(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& v : out.data()) v *= inv;
  return make_op(std::move(out), {a}, [inv](Node& n) {
    Node& p = parent(n, 0);
    Tensor g(p.value.shape());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = n.grad[j] * inv;
    p.accumulate(g);
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = out.row(i);
    double mx = -INFINITY;
    for (double v : xi) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (double& v : yi) v /= z;
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor g(n.value.shape());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto y = n.value.row(i);
      auto dy = n.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < y.size(); ++j) g(i, j) = y[j] * (dy[j] - dot);
    }
    parent(n, 0).accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) {
      g_degenerate_rows.fetch_add(1);
      continue;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
  }
  return make_op(std::move(out), {a}, [norms = std::move(norms)](Node& n) {
    Tensor g(n.value.shape());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (norms[i] == 0.0) continue;
      auto y = n.value.row(i);
      auto dy = n.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < y.size(); ++j) g(i, j) = (dy[j] - y[j] * dot) / norms[i];
    }
    parent(n, 0).accumulate(g);
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape " + a.value().shape_str() + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return make_op(a.value().reshaped({rows, cols}), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(n.grad.reshaped(p.value.shape()));
  });
}

Var grouped_attention(const Var& q, const Var& k, const Var& v, std::size_t h, std::size_t m) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t d = Q.cols();
  if (d == 0) throw ShapeError("attention width must be positive");
  if (h == 0 || m == 0) throw ShapeError("attention needs at least one query and one context token");
  if (K.cols() != d || V.cols() != d || Q.rows() % h != 0 || K.rows() != V.rows() || K.rows() % m != 0 ||
      Q.rows() / h != K.rows() / m) {
    throw ShapeError("attention: Q " + Q.shape_str() + ", K " + K.shape_str() + ", V " + V.shape_str());
  }
  const std::size_t groups = Q.rows() / h;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out = Tensor::matrix(Q.rows(), d);
  Tensor weights = Tensor::matrix(Q.rows(), m);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t a = 0; a < h; ++a) {
      const std::size_t qi = g * h + a;
      auto w = weights.row(qi);
      double mx = -INFINITY;
      for (std::size_t b = 0; b < m; ++b) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += Q(qi, c) * K(g * m + b, c);
        w[b] = s * inv_sqrt_d;
        mx = std::max(mx, w[b]);
      }
      double z = 0.0;
      for (double& x : w) z += (x = std::exp(x - mx));
      for (double& x : w) x /= z;
      for (std::size_t b = 0; b < m; ++b)
        for (std::size_t c = 0; c < d; ++c) out(qi, c) += w[b] * V(g * m + b, c);
    }
  }
  return make_op(std::move(out), {q, k, v}, [weights = std::move(weights), h, m, d, inv_sqrt_d](Node& n) {
    Node& pq = parent(n, 0);
    Node& pk = parent(n, 1);
    Node& pv = parent(n, 2);
    const Tensor& Q = pq.value;
    const Tensor& K = pk.value;
    const Tensor& V = pv.value;
    Tensor dQ(Q.shape()), dK(K.shape()), dV(V.shape());
    std::vector<double> dp(m), ds(m);
    const std::size_t groups = Q.rows() / h;
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t a = 0; a < h; ++a) {
        const std::size_t qi = g * h + a;
        auto w = weights.row(qi);
        auto dout = n.grad.row(qi);
        double wdp = 0.0;
        for (std::size_t b = 0; b < m; ++b) {
          const std::size_t kb = g * m + b;
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            s += dout[c] * V(kb, c);
            dV(kb, c) += w[b] * dout[c];
          }
          dp[b] = s;
          wdp += w[b] * s;
        }
        for (std::size_t b = 0; b < m; ++b) ds[b] = w[b] * (dp[b] - wdp) * inv_sqrt_d;
        for (std::size_t b = 0; b < m; ++b) {
          const std::size_t kb = g * m + b;
          for (std::size_t c = 0; c < d; ++c) {
            dQ(qi, c) += ds[b] * K(kb, c);
            dK(kb, c) += ds[b] * Q(qi, c);
          }
        }
      }
    }
    pq.accumulate(dQ);
    pk.accumulate(dK);
    pv.accumulate(dV);
  });
}

}  // namespace ag

}  // namespace imvc
