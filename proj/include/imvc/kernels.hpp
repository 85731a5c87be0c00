#pragma once

// Dense kernels shared by the autodiff engine, k-means and the samplers.
//
// The kernels in `imvc::kernels` are OpenMP-parallel over output rows. Every
// output element is accumulated in the same order as the reference loops in
// `imvc::kernels::serial`, so both paths produce bit-identical results and the
// thread count never changes a training trajectory.

#include <cstddef>
#include <span>
#include <vector>

#include "imvc/tensor.hpp"

namespace imvc::kernels {

/// C = A * B.
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A * B^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// C = A^T * B.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// Nearest-centroid assignment. Writes labels and per-point squared distances.
void assign_nearest(const Tensor& points, const Tensor& centroids, std::span<int> labels,
                    std::span<double> sq_dist);

/// Squared Euclidean distance from every point to `center`.
void sq_dist_to(const Tensor& points, std::span<const double> center, std::span<double> out);

/// Number of threads the parallel kernels will use.
int max_threads();

/// Work (multiply-adds) below which kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
void assign_nearest(const Tensor& points, const Tensor& centroids, std::span<int> labels,
                    std::span<double> sq_dist);

}  // namespace serial

}  // namespace imvc::kernels
