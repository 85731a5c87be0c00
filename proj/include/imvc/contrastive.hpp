#pragma once

#include <cstdint>
#include <vector>

#include "imvc/autoencoder.hpp"
#include "imvc/nn.hpp"

namespace imvc {

struct HeadsConfig {
  std::size_t clusters = 4;
  std::size_t mid_dim = 64;
  std::size_t feature_dim = 32;
  double temperature = 0.5;
};

/// View-specific MLPs into a shared trunk, then two parallel heads: unit-norm
/// features H and softmax cluster assignments Y.
class ClusterHeads {
 public:
  ClusterHeads(std::size_t latent_dim, std::size_t views, const HeadsConfig& cfg, std::uint64_t seed);
  ClusterHeads(ClusterHeads&&) = default;
  ClusterHeads(const ClusterHeads&) = delete;
  ClusterHeads& operator=(const ClusterHeads&) = delete;

  struct Output {
    Var features;     // n x d_h, unit rows
    Var assignments;  // n x k, stochastic rows
  };
  Output forward(std::size_t view, const Var& z) const;

  const HeadsConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  HeadsConfig cfg_;
  ParamStore store_;
  std::vector<Mlp> view_specific_;
  Mlp shared_, feature_head_, assignment_head_;
};

/// -(2/n) sum_i <H1_i, H2_i> + 1/(n(n-1)) sum_{i != j} <H1_i, H2_j>^2.
Var spectral_loss(const Var& h1, const Var& h2);

/// Cluster-level contrast over l2-normalised assignment columns at temperature
/// tau, plus sum_m sum_j p_j log p_j on the mean assignment p of each view.
Var category_loss(const Var& y1, const Var& y2, double temperature);

/// The negative-entropy part of category_loss for one view.
Var assignment_neg_entropy(const Var& y);

/// spectral_loss + category_loss.
Var clustering_loss(const Var& h1, const Var& h2, const Var& y1, const Var& y2, double temperature);

/// Row-wise argmax of y1 + y2, lowest index on ties.
std::vector<int> predict(const Tensor& y1, const Tensor& y2);

struct Assignments {
  Tensor y1, y2;
  std::vector<int> fused;
};

/// Inference on a completed bank.
Assignments assign(const ClusterHeads& heads, const LatentBank& bank);
/// Features H^v for view v on a completed bank.
Tensor features(const ClusterHeads& heads, const LatentBank& bank, std::size_t view);

/// Stage 3: trains the heads on every row of a bank with no absent entries.
TrainingCurve train_stage3(ClusterHeads& heads, const LatentBank& bank, const TrainConfig& cfg);

}  // namespace imvc
