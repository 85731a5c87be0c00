#include "imvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imvc/error.hpp"
#include "imvc/kernels.hpp"
#include "imvc/rng.hpp"

namespace imvc {

namespace {

void check_pair(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) {
    throw ShapeError("label vectors differ in length: " + std::to_string(truth.size()) + " vs " +
                     std::to_string(pred.size()));
  }
  for (int y : truth)
    if (y < 0) throw ConfigError("labels must be non-negative");
  for (int y : pred)
    if (y < 0) throw ConfigError("labels must be non-negative");
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

ContingencyTable ContingencyTable::build(std::span<const int> truth, std::span<const int> pred) {
  check_pair(truth, pred);
  ContingencyTable t;
  const int kt = truth.empty() ? 0 : *std::ranges::max_element(truth) + 1;
  const int kp = pred.empty() ? 0 : *std::ranges::max_element(pred) + 1;
  t.counts.assign(static_cast<std::size_t>(kt), std::vector<std::int64_t>(static_cast<std::size_t>(kp), 0));
  t.row_totals.assign(static_cast<std::size_t>(kt), 0);
  t.col_totals.assign(static_cast<std::size_t>(kp), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto a = static_cast<std::size_t>(truth[i]);
    const auto b = static_cast<std::size_t>(pred[i]);
    ++t.counts[a][b];
    ++t.row_totals[a];
    ++t.col_totals[b];
  }
  t.n = static_cast<std::int64_t>(truth.size());
  return t;
}

std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  for (const auto& row : cost) {
    if (row.size() != n) throw ShapeError("hungarian needs a square cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw NumericError("hungarian cost must be finite");
  }
  // Potentials-based O(n^3) shortest augmenting path, 1-indexed with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double acc(std::span<const int> truth, std::span<const int> pred) {
  const ContingencyTable t = ContingencyTable::build(truth, pred);
  if (t.n == 0) return 0.0;
  // Square table over the union of both alphabets.
  const std::size_t k = std::max(t.row_totals.size(), t.col_totals.size());
  std::vector<std::vector<double>> cost(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < t.counts.size(); ++a)
    for (std::size_t b = 0; b < t.counts[a].size(); ++b) cost[a][b] = -static_cast<double>(t.counts[a][b]);
  const auto match = hungarian(cost);
  double hits = 0.0;
  for (std::size_t a = 0; a < k; ++a) hits -= cost[a][match[a]];
  return hits / static_cast<double>(t.n);
}

double nmi(std::span<const int> truth, std::span<const int> pred) {
  const ContingencyTable t = ContingencyTable::build(truth, pred);
  if (t.n == 0) return 0.0;
  const double n = static_cast<double>(t.n);
  auto entropy = [n](const std::vector<std::int64_t>& totals) {
    double h = 0.0;
    for (auto c : totals)
      if (c > 0) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double hu = entropy(t.row_totals);
  const double hv = entropy(t.col_totals);
  if (hu <= 0.0 || hv <= 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t a = 0; a < t.counts.size(); ++a)
    for (std::size_t b = 0; b < t.counts[a].size(); ++b) {
      const double c = static_cast<double>(t.counts[a][b]);
      if (c > 0) mi += (c / n) * std::log(c * n / (static_cast<double>(t.row_totals[a]) * t.col_totals[b]));
    }
  return std::clamp(mi / std::sqrt(hu * hv), 0.0, 1.0);
}

double ari(std::span<const int> truth, std::span<const int> pred) {
  const ContingencyTable t = ContingencyTable::build(truth, pred);
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& row : t.counts)
    for (auto c : row) index += comb2(static_cast<double>(c));
  for (auto c : t.row_totals) sum_a += comb2(static_cast<double>(c));
  for (auto c : t.col_totals) sum_b += comb2(static_cast<double>(c));
  const double total = comb2(static_cast<double>(t.n));
  if (total == 0.0) return 1.0;
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both labelings trivial
  return (index - expected) / (max_index - expected);
}

ClusterScores score(std::span<const int> truth, std::span<const int> pred) {
  return {acc(truth, pred), nmi(truth, pred), ari(truth, pred)};
}

KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const std::size_t n = x.rows(), d = x.cols();
  if (k == 0) throw ConfigError("k-means needs k >= 1");
  if (k > n) throw ConfigError("k-means needs k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  Rng rng(seed, "kmeans++");

  KMeansResult r;
  r.centroids = Tensor::matrix(k, d);
  std::vector<double> dist(n), tmp(n);
  // k-means++ seeding.
  std::size_t first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  std::ranges::copy(x.row(first), r.centroids.row(0).begin());
  kernels::sq_dist_to(x, r.centroids.row(0), dist);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : dist) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform(0.0, total);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= dist[i];
        if (target < 0.0 && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    }
    std::ranges::copy(x.row(pick), r.centroids.row(c).begin());
    kernels::sq_dist_to(x, r.centroids.row(c), tmp);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], tmp[i]);
  }

  r.labels.assign(n, 0);
  std::vector<int> prev;
  for (std::size_t it = 0;; ++it) {
    kernels::assign_nearest(x, r.centroids, r.labels, dist);
    double inertia = 0.0;
    for (double v : dist) inertia += v;
    r.history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it;
    if (r.labels == prev || it >= max_iter) break;
    prev = r.labels;

    Tensor sums = Tensor::matrix(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(r.labels[i]);
      ++counts[c];
      for (std::size_t p = 0; p < d; ++p) sums(c, p) += x(i, p);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::ranges::max_element(dist) - dist.begin());
        std::ranges::copy(x.row(far), r.centroids.row(c).begin());
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t p = 0; p < d; ++p) r.centroids(c, p) = sums(c, p) / static_cast<double>(counts[c]);
    }
  }
  return r;
}

}  // namespace imvc
