#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "imvc/rng.hpp"

namespace imvc {

/// Shuffles `rows` and cuts them into consecutive batches; the last may be short.
inline std::vector<std::vector<std::size_t>> shuffled_batches(std::vector<std::size_t> rows, std::size_t batch_size,
                                                              Rng& rng) {
  std::shuffle(rows.begin(), rows.end(), rng.engine());
  if (batch_size == 0) batch_size = rows.size();
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < rows.size(); s += batch_size) {
    out.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(s),
                     rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), s + batch_size)));
  }
  return out;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace imvc
