#include "imvc/contrastive.hpp"

#include <cmath>

#include "imvc/batching.hpp"
#include "imvc/error.hpp"

namespace imvc {

ClusterHeads::ClusterHeads(std::size_t latent_dim, std::size_t views, const HeadsConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg.clusters < 2) throw ConfigError("clustering needs k >= 2");
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  Rng rng(seed, "heads");
  for (std::size_t v = 0; v < views; ++v) {
    view_specific_.emplace_back(store_, "view" + std::to_string(v + 1),
                                MlpSpec{{latent_dim, cfg.mid_dim, cfg.mid_dim}, {Activation::relu}, OutputActivation::identity},
                                rng);
  }
  shared_ = Mlp(store_, "shared", MlpSpec{{cfg.mid_dim, cfg.mid_dim}, {}, OutputActivation::identity}, rng);
  feature_head_ = Mlp(store_, "feature_head", MlpSpec{{cfg.mid_dim, cfg.feature_dim}, {}, OutputActivation::l2_normalize}, rng);
  assignment_head_ = Mlp(store_, "assignment_head", MlpSpec{{cfg.mid_dim, cfg.clusters}, {}, OutputActivation::softmax}, rng);
}

ClusterHeads::Output ClusterHeads::forward(std::size_t view, const Var& z) const {
  Var h = ag::relu(view_specific_.at(view).forward(z));
  h = ag::relu(shared_.forward(h));
  return {feature_head_.forward(h), assignment_head_.forward(h)};
}

namespace {

Tensor identity(std::size_t n) {
  Tensor t = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor off_diagonal(std::size_t n) {
  Tensor t = Tensor::matrix(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 0.0;
  return t;
}

}  // namespace

Var spectral_loss(const Var& h1, const Var& h2) {
  const std::size_t n = h1.rows();
  if (n < 2) throw ConfigError("spectral loss needs at least two samples");
  if (!h1.value().same_shape(h2.value())) throw ShapeError("spectral loss: feature shapes differ");
  Var sim = ag::matmul_nt(h1, h2);
  Var aligned = ag::sum(ag::mul(sim, constant(identity(n))));
  Var repel = ag::sum(ag::mul(ag::square(sim), constant(off_diagonal(n))));
  const double dn = static_cast<double>(n);
  return ag::add(ag::scale(aligned, -2.0 / dn), ag::scale(repel, 1.0 / (dn * (dn - 1.0))));
}

Var assignment_neg_entropy(const Var& y) {
  Var p = ag::col_mean(y);
  return ag::sum(ag::xlogx(p));
}

Var category_loss(const Var& y1, const Var& y2, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!y1.value().same_shape(y2.value())) throw ShapeError("category loss: assignment shapes differ");
  const std::size_t k = y1.cols();
  if (k < 2) throw ConfigError("category loss needs k >= 2");
  const double inv_t = 1.0 / temperature;
  Var q1 = ag::l2_normalize_rows(ag::transpose(y1));
  Var q2 = ag::l2_normalize_rows(ag::transpose(y2));
  const Var eye = constant(identity(k));
  const Var off = constant(off_diagonal(k));
  Var pos = ag::row_sum(ag::mul(ag::scale(ag::matmul_nt(q1, q2), inv_t), eye));
  Var log_neg1 = ag::log(ag::row_sum(ag::mul(ag::exp(ag::scale(ag::matmul_nt(q1, q1), inv_t)), off)));
  Var log_neg2 = ag::log(ag::row_sum(ag::mul(ag::exp(ag::scale(ag::matmul_nt(q2, q2), inv_t)), off)));
  Var per_cluster = ag::sub(ag::scale(pos, 2.0), ag::add(log_neg1, log_neg2));
  Var contrast = ag::scale(ag::sum(per_cluster), -1.0 / static_cast<double>(k));
  return ag::add(contrast, ag::add(assignment_neg_entropy(y1), assignment_neg_entropy(y2)));
}

Var clustering_loss(const Var& h1, const Var& h2, const Var& y1, const Var& y2, double temperature) {
  return ag::add(spectral_loss(h1, h2), category_loss(y1, y2, temperature));
}

std::vector<int> predict(const Tensor& y1, const Tensor& y2) {
  if (!y1.same_shape(y2)) throw ShapeError("predict: assignment shapes differ");
  std::vector<int> out(y1.rows());
  for (std::size_t i = 0; i < y1.rows(); ++i) {
    double best = -INFINITY;
    for (std::size_t j = 0; j < y1.cols(); ++j) {
      const double s = y1(i, j) + y2(i, j);
      if (s > best) {
        best = s;
        out[i] = static_cast<int>(j);
      }
    }
  }
  return out;
}

namespace {

void require_complete(const LatentBank& bank) {
  if (bank.num_views() != 2) throw ConfigError("contrastive clustering supports two views");
  if (bank.count(LatentStatus::absent) != 0) {
    throw ConfigError("latent bank still has absent entries; complete it before clustering");
  }
}

}  // namespace

Assignments assign(const ClusterHeads& heads, const LatentBank& bank) {
  require_complete(bank);
  NoGradGuard guard;
  Assignments a;
  a.y1 = heads.forward(0, constant(bank.z[0])).assignments.value();
  a.y2 = heads.forward(1, constant(bank.z[1])).assignments.value();
  a.fused = predict(a.y1, a.y2);
  return a;
}

Tensor features(const ClusterHeads& heads, const LatentBank& bank, std::size_t view) {
  require_complete(bank);
  NoGradGuard guard;
  return heads.forward(view, constant(bank.z.at(view))).features.value();
}

TrainingCurve train_stage3(ClusterHeads& heads, const LatentBank& bank, const TrainConfig& cfg) {
  require_complete(bank);
  const std::size_t n = bank.size();
  if (n < 2) throw ConfigError("contrastive clustering needs at least two samples");
  TrainingCurve curve;
  Rng rng(cfg.seed, "stage3/batches");
  const double tau = heads.config().temperature;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : shuffled_batches(all_rows(n), cfg.batch_size, rng)) {
      if (batch.size() < 2) continue;
      auto o1 = heads.forward(0, constant(bank.z[0].gather_rows(batch)));
      auto o2 = heads.forward(1, constant(bank.z[1].gather_rows(batch)));
      Var loss = clustering_loss(o1.features, o2.features, o1.assignments, o2.assignments, tau);
      require_finite(loss.value(), "clustering loss");
      total += loss.item();
      ++batches;
      loss.backward();
      adamw_step(heads.params(), cfg.optimizer);
    }
    curve.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return curve;
}

}  // namespace imvc
