#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "imvc/tensor.hpp"

namespace imvc {

/// Co-occurrence counts of two labelings. Rows index true labels, columns
/// predicted labels.
struct ContingencyTable {
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::int64_t> row_totals, col_totals;
  std::int64_t n = 0;

  static ContingencyTable build(std::span<const int> truth, std::span<const int> pred);
};

/// Minimum-cost perfect matching on a square cost matrix; result[row] = column.
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost);

/// Accuracy under the best one-to-one relabeling of `pred`.
double acc(std::span<const int> truth, std::span<const int> pred);
/// Mutual information normalised by the geometric mean of the two entropies.
double nmi(std::span<const int> truth, std::span<const int> pred);
double ari(std::span<const int> truth, std::span<const int> pred);

struct ClusterScores {
  double acc = 0.0, nmi = 0.0, ari = 0.0;
};
ClusterScores score(std::span<const int> truth, std::span<const int> pred);

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;
  double inertia = 0.0;
  /// Inertia after every assignment step, first entry from the seeding.
  std::vector<double> history;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t max_iter = 300);

}  // namespace imvc
