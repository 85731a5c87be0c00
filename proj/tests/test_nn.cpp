#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "imvc/autograd.hpp"
#include "imvc/checkpoint.hpp"
#include "imvc/error.hpp"
#include "imvc/gradcheck.hpp"
#include "imvc/kernels.hpp"
#include "imvc/nn.hpp"
#include "imvc/optim.hpp"

using namespace imvc;
using testing::randn;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6);
  CHECK(t.reshaped({3, 2})(2, 1) == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  std::vector<std::size_t> idx{1, 0};
  CHECK(t.gather_rows(idx)(0, 0) == 4);
  t(0, 0) = NAN;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("mlp with zero weights outputs activation of the bias") {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", MlpSpec{{3, 2}, {}, OutputActivation::identity}, rng);
  for (auto& [name, p] : store.params()) {
    Tensor& v = const_cast<Var&>(p).mutable_value();
    for (double& x : v.data()) x = name.ends_with("bias") ? -0.5 : 0.0;
  }
  Tensor out = mlp.forward(constant(randn(4, 3, 2))).value();
  for (double x : out.data()) CHECK(x == -0.5);
}

TEST_CASE("relu on an identity layer") {
  ParamStore store;
  Rng rng(3);
  Linear lin(store, "id", 2, 2, false, true, rng);
  Tensor& w = store.get("id.weight").mutable_value();
  w = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor out = ag::relu(lin.forward(constant(Tensor::from_rows({{-1, 2}})))).value();
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("mlp rejects wrong input width") {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", MlpSpec{{3, 4, 2}}, rng);
  CHECK_THROWS_AS(mlp.forward(constant(randn(2, 5, 1))), ShapeError);
}

TEST_CASE("output activations hold their row invariants") {
  ParamStore store;
  Rng rng(5);
  Mlp soft(store, "s", MlpSpec{{6, 16, 5}, {Activation::gelu}, OutputActivation::softmax}, rng);
  Mlp unit(store, "u", MlpSpec{{6, 16, 7}, {Activation::relu}, OutputActivation::l2_normalize}, rng);
  const Tensor x = randn(20, 6, 6, 3.0);
  const Tensor y = soft.forward(constant(x)).value();
  const Tensor h = unit.forward(constant(x)).value();
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0, q = 0.0;
    for (double v : y.row(i)) {
      CHECK(v >= 0.0);
      s += v;
    }
    for (double v : h.row(i)) q += v * v;
    CHECK(std::abs(s - 1.0) < 1e-9);
    CHECK(std::abs(std::sqrt(q) - 1.0) < 1e-9);
  }
}

TEST_CASE("l2 normalize keeps a zero row at zero") {
  const std::size_t before = degenerate_row_count();
  Var x(Tensor::from_rows({{0, 0}, {3, 4}}), true);
  Var y = ag::l2_normalize_rows(x);
  CHECK(y.value()(0, 0) == 0.0);
  CHECK(y.value()(1, 1) == doctest::Approx(0.8));
  CHECK(degenerate_row_count() == before + 1);
  ag::sum(y).backward();
  CHECK(x.grad().all_finite());
}

TEST_CASE("finite differences agree with autodiff on a 3-layer mlp") {
  ParamStore store;
  Rng rng(11);
  Mlp mlp(store, "net", MlpSpec{{4, 8, 6, 3}, {Activation::relu, Activation::gelu}}, rng);
  const Tensor x = randn(5, 4, 12);
  const double err = gradient_check([&] { return ag::sum(mlp.forward(constant(x))); }, store);
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences agree for every autodiff op") {
  ParamStore store;
  Var a = store.add("a", randn(3, 4, 21));
  Var b = store.add("b", randn(3, 4, 22));
  Var w = store.add("w", randn(4, 2, 23));
  Var c = store.add("c", randn(3, 1, 24));
  Var r = store.add("r", randn(1, 4, 25));
  auto loss = [&] {
    Var t = ag::add(ag::mul(a, b), ag::sub(a, b));
    t = ag::add_row(t, r);
    t = ag::mul_col(t, c);
    Var pos = ag::add_scalar(ag::square(t), 0.1);
    Var s = ag::softmax_rows(ag::matmul(ag::gelu(t), w));
    Var n = ag::l2_normalize_rows(ag::transpose(ag::exp(ag::scale(t, 0.3))));
    Var m = ag::matmul_nt(ag::relu(t), ag::reshape(a, 3, 4));
    return ag::add(ag::add(ag::add(ag::sum(ag::log(pos)), ag::sum(ag::xlogx(pos))), ag::mean(ag::square(s))),
                   ag::add(ag::sum(ag::row_sum(n)), ag::add(ag::sum(ag::col_mean(m)), ag::mean(a))));
  };
  CHECK(gradient_check(loss, store) < 1e-4);
}

TEST_CASE("grouped attention gradients") {
  ParamStore store;
  Var q = store.add("q", randn(6, 3, 31));
  Var k = store.add("k", randn(4, 3, 32));
  Var v = store.add("v", randn(4, 3, 33));
  Tensor proj = randn(6, 3, 34);
  auto loss = [&] { return ag::sum(ag::mul(ag::grouped_attention(q, k, v, 3, 2), constant(proj))); };
  CHECK(gradient_check(loss, store) < 1e-4);
}

TEST_CASE("gradient check of a quadratic is essentially exact") {
  ParamStore store;
  Var th = store.add("theta", randn(3, 3, 41));
  const double err = gradient_check([&] { return ag::scale(ag::sum(ag::square(th)), 0.5); }, store);
  CHECK(err < 1e-7);
  CHECK(th.value().all_finite());
}

TEST_CASE("gradient check flags a doubled gradient") {
  ParamStore store;
  Var th = store.add("theta", Tensor::from_rows({{0.7, -1.3, 2.1}}));
  auto broken = [&] {
    Var s = ag::sum(ag::square(th));
    return make_op(s.value(), {th}, [th](Node& self) {
      Tensor g = th.value();
      for (double& x : g.data()) x *= 4.0 * self.grad[0];  // true gradient is 2x
      th.node()->accumulate(g);
    });
  };
  const double err = gradient_check(broken, store);
  // |4x - 2x| / max(1, |4x|) = 0.5 once |4x| >= 1
  CHECK(err == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("gradient check rejects a nondeterministic loss") {
  ParamStore store;
  Var th = store.add("theta", Tensor::from_rows({{1.0}}));
  int calls = 0;
  auto noisy = [&] { return ag::add_scalar(ag::sum(th), 1e-3 * (++calls)); };
  CHECK_THROWS_AS(gradient_check(noisy, store), NumericError);
}

namespace {

Tensor hand_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double d = static_cast<double>(q.cols());
  Tensor out = Tensor::matrix(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<double> s(k.rows());
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      s[j] = dot / std::sqrt(d);
      mx = std::max(mx, s[j]);
    }
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.rows(); ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += s[j] / z * v(j, c);
  }
  return out;
}

Tensor mm(const Tensor& a, const Tensor& b) { return kernels::serial::matmul(a, b); }

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = mm(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  return y;
}

}  // namespace

TEST_CASE("attention block against a hand evaluation") {
  ParamStore store;
  Rng rng(51);
  AttentionBlock block(store, "att", 2, 2, 2, rng);
  const Tensor query = Tensor::from_rows({{0.3, -0.8}});
  const Tensor ctx = Tensor::from_rows({{1.0, 0.5}, {-0.4, 2.0}});
  const Tensor pq = affine(query, store.get("att.phi.weight").value(), store.get("att.phi.bias").value());
  const Tensor pc = affine(ctx, store.get("att.tau.weight").value(), store.get("att.tau.bias").value());
  const Tensor expect = hand_attention(mm(pq, store.get("att.wq.weight").value()), mm(pc, store.get("att.wk.weight").value()),
                                       mm(pc, store.get("att.wv.weight").value()));
  const Tensor got = block.forward(constant(query), constant(ctx)).value();
  CHECK(testing::max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("single context token makes attention query-independent") {
  ParamStore store;
  Rng rng(52);
  AttentionBlock block(store, "att", 3, 4, 5, rng);
  const Tensor ctx = randn(1, 4, 53);
  const Tensor out = block.forward(constant(randn(6, 3, 54)), constant(ctx)).value();
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t c = 0; c < 5; ++c) CHECK(out(i, c) == doctest::Approx(out(0, c)).epsilon(1e-12));
}

TEST_CASE("identical context tokens give equal weights") {
  // With two identical keys the output must equal the shared value row exactly as for one key.
  ParamStore store;
  Rng rng(55);
  AttentionBlock block(store, "att", 3, 3, 4, rng);
  Tensor one = randn(1, 3, 56);
  Tensor two = Tensor::matrix(2, 3);
  for (std::size_t c = 0; c < 3; ++c) two(0, c) = two(1, c) = one(0, c);
  const Tensor q = randn(4, 3, 57);
  const Tensor a = block.forward(constant(q), constant(one)).value();
  const Tensor b = block.forward(constant(q), constant(two)).value();
  CHECK(testing::max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("grouped attention equals per-group attention") {
  ParamStore store;
  Rng rng(58);
  AttentionBlock block(store, "att", 3, 3, 4, rng);
  const Tensor q = randn(8, 3, 59), ctx = randn(8, 3, 60);
  const Tensor batched = block.forward_grouped(constant(q), constant(ctx), 4, 4).value();
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<std::size_t> rows{4 * g, 4 * g + 1, 4 * g + 2, 4 * g + 3};
    const Tensor one = block.forward(constant(q.gather_rows(rows)), constant(ctx.gather_rows(rows))).value();
    CHECK(testing::max_abs_diff(one, batched.gather_rows(rows)) < 1e-12);
  }
}

TEST_CASE("adamw with zero learning rate leaves parameters unchanged") {
  ParamStore store;
  Var p = store.add("p", randn(2, 3, 61));
  const Tensor before = p.value();
  std::map<std::string, Tensor> g{{"p", randn(2, 3, 62)}};
  AdamWConfig cfg;
  cfg.lr = 0.0;
  adamw_step(store, g, cfg);
  CHECK(p.value() == before);
  CHECK(store.step() == 1);
}

TEST_CASE("decay-only step scales by exactly 1 - lr * wd") {
  ParamStore store;
  Var p = store.add("p", randn(2, 2, 63));
  const Tensor before = p.value();
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.3;
  adamw_step(store, {{"p", Tensor::matrix(2, 2)}}, cfg);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.value()[i] == before[i] * (1.0 - 0.01 * 0.3));
  for (double m : store.first_moment("p").data()) CHECK(m == 0.0);
  for (double v : store.second_moment("p").data()) CHECK(v == 0.0);
}

TEST_CASE("first adamw step matches the scalar recurrence") {
  ParamStore store;
  Var p = store.add("p", Tensor::from_rows({{0.5, -2.0, 3.0}}));
  const Tensor g = Tensor::from_rows({{0.2, -0.7, 1e-3}});
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.1;
  adamw_step(store, {{"p", g}}, cfg);
  const double theta[3] = {0.5, -2.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const double m = (1 - cfg.beta1) * g[i], v = (1 - cfg.beta2) * g[i] * g[i];
    const double mh = m / (1 - cfg.beta1), vh = v / (1 - cfg.beta2);
    const double expect = theta[i] * (1 - cfg.lr * cfg.weight_decay) - cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(p.value()[i] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(p.value()[i] - theta[i] * (1 - cfg.lr * cfg.weight_decay) ==
          doctest::Approx(-cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps)).epsilon(1e-9));
  }
}

TEST_CASE("adamw rejects non-finite gradients") {
  ParamStore store;
  store.add("p", Tensor::matrix(1, 2));
  Tensor g = Tensor::matrix(1, 2);
  g[1] = INFINITY;
  CHECK_THROWS_AS(adamw_step(store, {{"p", g}}, AdamWConfig{}), NumericError);
}

TEST_CASE("adamw with zero decay coincides with a reference adam") {
  ParamStore store;
  Rng rng(71);
  Mlp mlp(store, "m", MlpSpec{{3, 5, 2}}, rng);
  const Tensor x = randn(7, 3, 72), y = randn(7, 2, 73);
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  // Reference: plain Adam on copies of the parameters, fed the same gradients.
  std::map<std::string, Tensor> theta, m, v;
  for (const auto& [name, p] : store.params()) {
    theta[name] = p.value();
    m[name] = v[name] = Tensor(p.value().shape());
  }
  for (int step = 1; step <= 25; ++step) {
    Var loss = ag::mean(ag::square(ag::sub(mlp.forward(constant(x)), constant(y))));
    loss.backward();
    std::map<std::string, Tensor> grads;
    for (const auto& [name, p] : store.params()) grads[name] = p.grad();
    store.zero_grad();
    adamw_step(store, grads, cfg);
    for (auto& [name, g] : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[name][i] = cfg.beta1 * m[name][i] + (1 - cfg.beta1) * g[i];
        v[name][i] = cfg.beta2 * v[name][i] + (1 - cfg.beta2) * g[i] * g[i];
        const double mh = m[name][i] / (1 - std::pow(cfg.beta1, step));
        const double vh = v[name][i] / (1 - std::pow(cfg.beta2, step));
        theta[name][i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      }
    }
  }
  for (const auto& [name, p] : store.params()) CHECK(testing::max_abs_diff(p.value(), theta[name]) < 1e-12);
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  auto run = [] {
    ParamStore store;
    Rng rng(81);
    Mlp mlp(store, "m", MlpSpec{{4, 8, 3}}, rng);
    const Tensor x = randn(10, 4, 82);
    for (int i = 0; i < 10; ++i) {
      ag::mean(ag::square(mlp.forward(constant(x)))).backward();
      adamw_step(store, AdamWConfig{});
    }
    return store.digest();
  };
  CHECK(run() == run());
}

TEST_CASE("intermediate gradients are released unless retained") {
  Var x(Tensor::from_rows({{1.0, 2.0}}), true);
  Var h = ag::square(x);
  Var k = ag::scale(x, 3.0);
  k.retain_grad();
  ag::sum(ag::add(h, k)).backward();
  CHECK_FALSE(h.has_grad());
  CHECK(k.has_grad());
  CHECK(x.grad()(0, 1) == doctest::Approx(2 * 2.0 + 3.0));
}

TEST_CASE("no-grad guard records no graph") {
  Var x(Tensor::from_rows({{1.0}}), true);
  NoGradGuard guard;
  Var y = ag::square(x);
  CHECK(y.node()->parents.empty());
}

TEST_CASE("checkpoint round trip and layout") {
  testing::TempDir dir("ckpt");
  ParamStore a;
  Rng rng(91);
  Mlp mlp(a, "m", MlpSpec{{3, 4, 2}}, rng);
  a.set_step(17);
  save_checkpoint(dir.path / "a.ckpt", a);

  ParamStore b;
  Rng other(92);
  Mlp mlp2(b, "m", MlpSpec{{3, 4, 2}}, other);
  CHECK(a.digest() != b.digest());
  load_checkpoint(dir.path / "a.ckpt", b);
  CHECK(a.digest() == b.digest());
  CHECK(b.step() == 17);

  const CheckpointData raw = read_checkpoint(dir.path / "a.ckpt");
  CHECK(raw.tensors.size() == 4);
  CHECK(raw.tensors.at("m.0.weight").shape() == std::vector<std::size_t>{3, 4});

  std::ifstream is(dir.path / "a.ckpt", std::ios::binary);
  std::string tag(kCheckpointTag.size(), '\0');
  is.read(tag.data(), static_cast<std::streamsize>(tag.size()));
  CHECK(tag == "imvcdc-ckpt-v1");

  ParamStore c;
  Mlp mlp3(c, "m", MlpSpec{{3, 5, 2}}, other);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "a.ckpt", c), FormatError);
}

TEST_CASE("truncated checkpoint is rejected") {
  testing::TempDir dir("ckpt_trunc");
  ParamStore a;
  a.add("w", randn(4, 4, 93));
  save_checkpoint(dir.path / "a.ckpt", a);
  const auto size = std::filesystem::file_size(dir.path / "a.ckpt");
  std::filesystem::resize_file(dir.path / "a.ckpt", size - 5);
  CHECK_THROWS_AS(read_checkpoint(dir.path / "a.ckpt"), FormatError);
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  for (std::size_t n : {3u, 257u, 2048u}) {
    const Tensor a = randn(n, 37, n), b = randn(37, 29, n + 1), c = randn(n, 37, n + 2), d = randn(n, 29, n + 3);
    CHECK(kernels::matmul(a, b) == kernels::serial::matmul(a, b));
    CHECK(kernels::matmul_nt(a, c) == kernels::serial::matmul_nt(a, c));
    CHECK(kernels::matmul_tn(a, d) == kernels::serial::matmul_tn(a, d));
    const Tensor cent = randn(6, 37, n + 4);
    std::vector<int> l1(n), l2(n);
    std::vector<double> d1(n), d2(n);
    kernels::assign_nearest(a, cent, l1, d1);
    kernels::serial::assign_nearest(a, cent, l2, d2);
    CHECK(l1 == l2);
    CHECK(d1 == d2);
  }
}

TEST_CASE("matmul against a naive triple loop") {
  const Tensor a = randn(5, 4, 101), b = randn(4, 3, 102);
  const Tensor c = kernels::matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  CHECK_THROWS_AS(kernels::matmul(a, a), ShapeError);
}
