#include "imvc/kernels.hpp"

#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "imvc/error.hpp"

namespace imvc::kernels {

namespace {

void require(bool ok, const char* what, const Tensor& a, const Tensor& b) {
  if (!ok) throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

using Index = std::ptrdiff_t;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static) if (n * k * m > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double* ci = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* bp = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static) if (n * k * m > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* ai = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      pc[i * m + j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  const std::size_t r = a.rows(), n = a.cols(), m = b.cols();
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static) if (n * r * m > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double* ci = pc + i * m;
    for (std::size_t p = 0; p < r; ++p) {
      const double api = pa[p * n + i];
      const double* bp = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

void assign_nearest(const Tensor& points, const Tensor& centroids, std::span<int> labels,
                    std::span<double> sq_dist) {
  require(points.cols() == centroids.cols(), "assign_nearest", points, centroids);
  const std::size_t n = points.rows(), k = centroids.rows(), d = points.cols();
#pragma omp parallel for schedule(static) if (n * k * d > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    auto x = points.row(static_cast<std::size_t>(i));
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (std::size_t j = 0; j < k; ++j) {
      auto c = centroids.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = x[p] - c[p];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_j = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best_j;
    sq_dist[static_cast<std::size_t>(i)] = best;
  }
}

void sq_dist_to(const Tensor& points, std::span<const double> center, std::span<double> out) {
  const std::size_t n = points.rows(), d = points.cols();
#pragma omp parallel for schedule(static) if (n * d > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    auto x = points.row(static_cast<std::size_t>(i));
    double s = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      const double diff = x[p] - center[p];
      s += diff * diff;
    }
    out[static_cast<std::size_t>(i)] = s;
  }
}

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Tensor c = Tensor::matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Tensor c = Tensor::matrix(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

void assign_nearest(const Tensor& points, const Tensor& centroids, std::span<int> labels,
                    std::span<double> sq_dist) {
  require(points.cols() == centroids.cols(), "assign_nearest", points, centroids);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (std::size_t j = 0; j < centroids.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < points.cols(); ++p) {
        const double diff = points(i, p) - centroids(j, p);
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_j = static_cast<int>(j);
      }
    }
    labels[i] = best_j;
    sq_dist[i] = best;
  }
}

}  // namespace serial

}  // namespace imvc::kernels
