#include "imvc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "imvc/binio.hpp"
#include "imvc/error.hpp"
#include "imvc/rng.hpp"

namespace imvc {

void MultiViewDataset::validate() const {
  if (views.size() < 2) throw ConfigError("a multi-view dataset needs at least two views");
  const std::size_t n = views.front().rows();
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].rank() != 2) throw ShapeError("view " + std::to_string(v) + " is not a matrix");
    if (views[v].rows() != n) {
      throw ShapeError("view " + std::to_string(v) + " has " + std::to_string(views[v].rows()) + " rows, expected " +
                       std::to_string(n));
    }
    if (!views[v].all_finite()) throw NumericError("view " + std::to_string(v) + " has non-finite features");
  }
  if (labels) {
    if (labels->size() != n) throw ShapeError("label count does not match sample count");
    for (int y : *labels) {
      if (y < 0) throw ConfigError("labels must be non-negative");
    }
  }
}

MaskMatrix::MaskMatrix(std::size_t n, std::size_t views, double missing_rate)
    : n_(n), views_(views), eta_(missing_rate), bits_(n * views, 1) {}

std::size_t MaskMatrix::row_sum(std::size_t i) const {
  std::size_t s = 0;
  for (std::size_t v = 0; v < views_; ++v) s += bits_[i * views_ + v];
  return s;
}

std::size_t MaskMatrix::incomplete_count() const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n_; ++i) c += complete(i) ? 0 : 1;
  return c;
}

std::size_t MaskMatrix::missing_count(std::size_t v) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n_; ++i) c += observed(i, v) ? 0 : 1;
  return c;
}

std::vector<std::size_t> MaskMatrix::complete_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_; ++i)
    if (complete(i)) out.push_back(i);
  return out;
}

Tensor MaskMatrix::column(std::size_t v) const {
  Tensor c = Tensor::matrix(n_, 1);
  for (std::size_t i = 0; i < n_; ++i) c[i] = observed(i, v) ? 1.0 : 0.0;
  return c;
}

bool MaskMatrix::valid() const {
  for (std::size_t i = 0; i < n_; ++i)
    if (row_sum(i) == 0) return false;
  return true;
}

MaskMatrix generate_mask(std::size_t n, std::size_t views, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("missing rate must lie in [0, 1], got " + std::to_string(eta));
  if (views < 2) throw ConfigError("masks need at least two views");
  MaskMatrix mask(n, views, eta);
  const auto incomplete = static_cast<std::size_t>(std::llround(eta * static_cast<double>(n)));
  Rng rng(seed, "mask");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  // Start the alternation on a random view so view 0 is not always favoured for odd counts.
  const auto offset = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(views) - 1));
  for (std::size_t r = 0; r < incomplete; ++r) {
    const std::size_t i = order[r];
    if (views == 2) {
      mask.set(i, (r + offset) % 2, false);
      continue;
    }
    // Drop between 1 and V-1 views, chosen uniformly.
    const auto drop = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(views) - 1));
    std::vector<std::size_t> vs(views);
    std::iota(vs.begin(), vs.end(), std::size_t{0});
    std::shuffle(vs.begin(), vs.end(), rng.engine());
    for (std::size_t j = 0; j < drop; ++j) mask.set(i, vs[j], false);
  }
  return mask;
}

namespace {

/// k points with equal pairwise distance `separation`, embedded in `dim` dimensions.
Tensor simplex_centres(std::size_t k, std::size_t dim, double separation, Rng& rng) {
  Tensor centres = Tensor::matrix(k, dim);
  if (dim >= k) {
    // Random orthonormal frame; e_j mapped through it keeps |c_i - c_j| = sqrt(2) * scale.
    std::vector<std::vector<double>> basis;
    while (basis.size() < k) {
      std::vector<double> u(dim);
      for (double& x : u) x = rng.normal();
      for (const auto& b : basis) {
        const double dot = std::inner_product(u.begin(), u.end(), b.begin(), 0.0);
        for (std::size_t p = 0; p < dim; ++p) u[p] -= dot * b[p];
      }
      const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
      if (norm < 1e-8) continue;
      for (double& x : u) x /= norm;
      basis.push_back(std::move(u));
    }
    const double scale = separation / std::sqrt(2.0);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t p = 0; p < dim; ++p) centres(j, p) = scale * basis[j][p];
  } else {
    // Too few dimensions for an exact simplex: random directions at the same radius.
    const double radius = separation / std::sqrt(2.0);
    for (std::size_t j = 0; j < k; ++j) {
      double norm = 0.0;
      for (std::size_t p = 0; p < dim; ++p) norm += std::pow(centres(j, p) = rng.normal(), 2);
      norm = std::sqrt(norm);
      for (std::size_t p = 0; p < dim; ++p) centres(j, p) *= radius / norm;
    }
  }
  return centres;
}

std::vector<int> balanced_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  std::shuffle(labels.begin(), labels.end(), rng.engine());
  return labels;
}

}  // namespace

MultiViewDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.clusters < 2) throw ConfigError("synthetic data needs at least two clusters");
  if (spec.clusters > spec.samples) throw ConfigError("more clusters than samples");
  if (spec.latent_dim == 0) throw ConfigError("latent dimension must be positive");
  if (spec.view_dims.size() < 2) throw ConfigError("synthetic data needs at least two views");
  if (spec.view_noise < 0.0) throw ConfigError("view noise must be non-negative");
  if (!(spec.view_correlation >= 0.0 && spec.view_correlation <= 1.0)) {
    throw ConfigError("view correlation must lie in [0, 1]");
  }
  if (spec.identity_maps) {
    for (auto d : spec.view_dims) {
      if (d != spec.latent_dim || spec.private_dim != 0) {
        throw ConfigError("identity view maps need view dims equal to the latent dim and no private factor");
      }
    }
  }
  const std::size_t n = spec.samples, k = spec.clusters, ds = spec.latent_dim;

  Rng centre_rng(spec.seed, "synthetic/centres");
  const Tensor centres = simplex_centres(k, ds, spec.separation, centre_rng);
  Rng label_rng(spec.seed, "synthetic/labels");
  std::vector<int> labels = balanced_labels(n, k, label_rng);

  const double shared = std::sqrt(spec.view_correlation), own = std::sqrt(1.0 - spec.view_correlation);
  Tensor common = Tensor::matrix(n, ds);
  Rng latent_rng(spec.seed, "synthetic/latent");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < ds; ++p) common(i, p) = centres(static_cast<std::size_t>(labels[i]), p) + shared * latent_rng.normal();

  MultiViewDataset out;
  out.labels = std::move(labels);
  for (std::size_t v = 0; v < spec.view_dims.size(); ++v) {
    const std::string tag = "synthetic/view" + std::to_string(v);
    const std::size_t dv = spec.view_dims[v];
    const std::size_t dp = spec.private_dim;
    // Source = [shared latent | view-private factor].
    Tensor latent = common;
    if (own > 0.0) {
      Rng own_rng(spec.seed, tag + "/own");
      for (double& a : latent.data()) a += own * own_rng.normal();
    }
    Tensor source = Tensor::matrix(n, ds + dp);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < ds; ++p) source(i, p) = latent(i, p);
    if (dp > 0) {
      Rng prng(spec.seed, tag + "/private");
      const Tensor pc = simplex_centres(k, dp, spec.private_separation, prng);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(prng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
        for (std::size_t p = 0; p < dp; ++p) source(i, ds + p) = pc(c, p) + prng.normal();
      }
    }
    Tensor x = Tensor::matrix(n, dv);
    if (spec.identity_maps) {
      x = latent;
    } else {
      Rng map_rng(spec.seed, tag + "/map");
      Tensor map = Tensor::matrix(ds + dp, dv);
      const double s = 1.0 / std::sqrt(static_cast<double>(ds + dp));
      for (double& a : map.data()) a = s * map_rng.normal();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < ds + dp; ++p) {
          const double sp = source(i, p);
          for (std::size_t j = 0; j < dv; ++j) x(i, j) += sp * map(p, j);
        }
    }
    if (spec.view_noise > 0.0) {
      Rng noise_rng(spec.seed, tag + "/noise");
      for (double& a : x.data()) a += spec.view_noise * noise_rng.normal();
    }
    if (spec.squash) {
      for (double& a : x.data()) a = 1.0 / (1.0 + std::exp(-a));
    }
    out.views.push_back(std::move(x));
  }
  return out;
}

MultiViewDataset apply_zero_padding(const MultiViewDataset& data, const MaskMatrix& mask) {
  if (mask.rows() != data.size() || mask.views() != data.num_views()) {
    throw ShapeError("mask shape does not match dataset");
  }
  MultiViewDataset out = data;
  for (std::size_t v = 0; v < out.views.size(); ++v)
    for (std::size_t i = 0; i < mask.rows(); ++i)
      if (!mask.observed(i, v)) std::ranges::fill(out.views[v].row(i), 0.0);
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open IDX file: " + path.string());
  const std::uint32_t magic = binio::read_be32(is, "IDX magic");
  const std::uint32_t ndims = magic & 0xFF;
  if ((magic >> 8) != 0x08 || ndims == 0 || ndims > 3) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw FormatError("unsupported IDX magic " + std::string(buf) + " in " + path.string());
  }
  IdxArray out;
  std::uint64_t total = 1;
  for (std::uint32_t d = 0; d < ndims; ++d) {
    const std::uint32_t size = binio::read_be32(is, "IDX dimension");
    out.dims.push_back(size);
    if (size != 0 && total > (std::uint64_t{1} << 36) / size) throw FormatError("IDX dimension overflow in " + path.string());
    total *= size;
  }
  out.bytes.resize(total);
  is.read(reinterpret_cast<char*>(out.bytes.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::uint64_t>(is.gcount()) != total) {
    throw FormatError("truncated IDX payload in " + path.string() + ": expected " + std::to_string(total) +
                      " bytes, got " + std::to_string(is.gcount()));
  }
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::uint64_t total = 1;
  for (auto d : array.dims) total *= d;
  if (array.dims.empty() || array.dims.size() > 3 || total != array.bytes.size()) {
    throw ShapeError("IDX array dims do not match payload");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open IDX file for writing: " + path.string());
  binio::write_be32(os, 0x00000800u | static_cast<std::uint32_t>(array.dims.size()));
  for (auto d : array.dims) binio::write_be32(os, d);
  os.write(reinterpret_cast<const char*>(array.bytes.data()), static_cast<std::streamsize>(array.bytes.size()));
}

Tensor load_idx(const std::filesystem::path& path) {
  IdxArray raw = read_idx(path);
  if (raw.dims.size() == 1) {
    std::vector<double> values(raw.bytes.begin(), raw.bytes.end());
    return Tensor({raw.dims[0]}, std::move(values));
  }
  const std::size_t n = raw.dims[0];
  std::size_t width = 1;
  for (std::size_t d = 1; d < raw.dims.size(); ++d) width *= raw.dims[d];
  Tensor out = Tensor::matrix(n, width);
  if (raw.bytes.empty()) return out;
  const auto [lo, hi] = std::ranges::minmax(raw.bytes);
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) {
    out[i] = range > 0.0 ? (static_cast<double>(raw.bytes[i]) - lo) / range : 0.0;
  }
  return out;
}

Tensor load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open matrix file: " + path.string());
  std::string tag(kMatrixTag.size(), '\0');
  if (!is.read(tag.data(), static_cast<std::streamsize>(tag.size())) || tag != kMatrixTag) {
    throw FormatError("bad matrix header in " + path.string());
  }
  const std::uint64_t n = binio::read_u64(is, "row count");
  const std::uint64_t d = binio::read_u64(is, "column count");
  if (d != 0 && n > (std::uint64_t{1} << 40) / d) throw FormatError("matrix dimensions overflow in " + path.string());
  // Payload length must match exactly.
  const auto start = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - start);
  is.seekg(start);
  if (remaining != n * d * 8) {
    throw FormatError("matrix payload in " + path.string() + " holds " + std::to_string(remaining) + " bytes, header implies " +
                      std::to_string(n * d * 8));
  }
  Tensor out = Tensor::matrix(n, d);
  for (double& x : out.data()) x = binio::read_f64(is, "matrix payload");
  return out;
}

void save_matrix(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open matrix file for writing: " + path.string());
  os.write(kMatrixTag.data(), static_cast<std::streamsize>(kMatrixTag.size()));
  binio::write_u64(os, t.rank() == 2 ? t.rows() : t.size());
  binio::write_u64(os, t.rank() == 2 ? t.cols() : 1);
  for (double x : t.data()) binio::write_f64(os, x);
  if (!os) throw Error("failed writing matrix " + path.string());
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open label file: " + path.string());
  std::vector<int> out;
  long long y;
  while (is >> y) {
    if (y < 0 || y > std::numeric_limits<int>::max()) throw FormatError("label out of range in " + path.string());
    out.push_back(static_cast<int>(y));
  }
  if (!is.eof()) throw FormatError("non-integer entry in label file " + path.string());
  return out;
}

void save_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open label file for writing: " + path.string());
  for (int y : labels) os << y << '\n';
}

namespace {

bool is_idx_path(const std::filesystem::path& p) {
  const std::string s = p.filename().string();
  return p.extension() == ".idx" || (s.size() >= 6 && s.compare(s.size() - 6, 6, "-ubyte") == 0);
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&base](const std::string& s) {
    std::filesystem::path p(s);
    return p.is_absolute() ? p : base / p;
  };
  Manifest m;
  if (!j.contains("views") || !j["views"].is_array()) throw ConfigError("manifest needs a \"views\" array");
  for (const auto& v : j["views"]) m.views.push_back(resolve(v.get<std::string>()));
  if (j.contains("labels") && !j["labels"].is_null()) m.labels = resolve(j["labels"].get<std::string>());
  if (j.contains("eta")) m.eta = j["eta"].get<double>();
  return m;
}

MultiViewDataset load_manifest_dataset(const Manifest& manifest) {
  MultiViewDataset out;
  for (const auto& p : manifest.views) out.views.push_back(is_idx_path(p) ? load_idx(p) : load_matrix(p));
  if (manifest.labels) {
    if (is_idx_path(*manifest.labels)) {
      Tensor raw = load_idx(*manifest.labels);
      out.labels.emplace();
      for (double y : raw.data()) out.labels->push_back(static_cast<int>(y));
    } else {
      out.labels = load_labels(*manifest.labels);
    }
  }
  out.validate();
  return out;
}

}  // namespace imvc
