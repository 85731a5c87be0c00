#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "imvc/nn.hpp"
#include "imvc/rng.hpp"
#include "imvc/tensor.hpp"

namespace testing {

inline imvc::Tensor randn(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  imvc::Rng rng(seed);
  imvc::Tensor t = imvc::Tensor::matrix(r, c);
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

inline double max_abs_diff(const imvc::Tensor& a, const imvc::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Moves parameters off zero-bias relu kinks before finite differencing.
inline void jitter(imvc::ParamStore& store, std::uint64_t seed, double scale = 0.1) {
  for (const auto& [name, p] : store.params()) {
    imvc::Var q = p;
    const imvc::Tensor r = randn(1, q.value().size(), seed++, scale);
    for (std::size_t i = 0; i < r.size(); ++i) q.mutable_value()[i] += r[i];
  }
}

// Fresh scratch directory under the build tree, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("imvc_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing
