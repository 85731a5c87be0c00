#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "imvc/tensor.hpp"

namespace imvc {

struct MultiViewDataset {
  std::vector<Tensor> views;               // n x d_v each
  std::optional<std::vector<int>> labels;  // length n, values in [0, k)

  std::size_t size() const { return views.empty() ? 0 : views.front().rows(); }
  std::size_t num_views() const { return views.size(); }
  /// Throws if views disagree on n, fewer than two views, non-finite features, or bad labels.
  void validate() const;
};

/// Observability index matrix: observed(i, v) is true iff view v of sample i exists.
class MaskMatrix {
 public:
  MaskMatrix() = default;
  MaskMatrix(std::size_t n, std::size_t views, double missing_rate = 0.0);

  static MaskMatrix all_observed(std::size_t n, std::size_t views) { return MaskMatrix(n, views, 0.0); }

  bool observed(std::size_t i, std::size_t v) const { return bits_[i * views_ + v] != 0; }
  void set(std::size_t i, std::size_t v, bool on) { bits_[i * views_ + v] = on ? 1 : 0; }

  std::size_t rows() const { return n_; }
  std::size_t views() const { return views_; }
  double missing_rate() const { return eta_; }

  std::size_t row_sum(std::size_t i) const;
  bool complete(std::size_t i) const { return row_sum(i) == views_; }
  std::size_t incomplete_count() const;
  std::size_t missing_count(std::size_t v) const;
  std::vector<std::size_t> complete_rows() const;
  /// Mask column for view v as an n x 1 tensor of 0/1.
  Tensor column(std::size_t v) const;
  /// Every row keeps at least one view.
  bool valid() const;

  bool operator==(const MaskMatrix&) const = default;

 private:
  std::size_t n_ = 0, views_ = 0;
  double eta_ = 0.0;
  std::vector<std::uint8_t> bits_;
};

/// round(eta * n) rows lose views; every row keeps at least one. For two views
/// the dropped view alternates so both views lose the same number of rows (+-1).
MaskMatrix generate_mask(std::size_t n, std::size_t views, double eta, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t clusters = 4;
  std::size_t samples = 1000;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> view_dims{20, 20};
  /// Std of isotropic Gaussian noise added independently to each view.
  double view_noise = 0.5;
  /// Pairwise distance between cluster centres, in units of within-cluster std.
  double separation = 5.5;
  /// Fraction of the within-cluster variance shared by all views; the rest is
  /// drawn independently per view, so a second view carries extra cluster evidence.
  double view_correlation = 0.8;
  /// Per-view nuisance: dimension and scale of a view-private latent factor
  /// with its own discrete cluster structure, independent of the labels.
  std::size_t private_dim = 0;
  double private_separation = 0.0;
  /// Pass every view feature through a logistic, giving pixel-like values in (0, 1).
  bool squash = false;
  /// Use identity view maps (requires latent_dim == every view dim).
  bool identity_maps = false;
  std::uint64_t seed = 0;
};

MultiViewDataset generate_synthetic(const SyntheticSpec& spec);

/// Rows with mask 0 are replaced by zeros; observed rows are untouched.
MultiViewDataset apply_zero_padding(const MultiViewDataset& data, const MaskMatrix& mask);

// IDX files: big-endian magic 0x0000 08 NN (u8 payload, NN dimensions), NN
// big-endian u32 sizes, then the payload.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);
/// Images become n x (rows * cols) min-max scaled to [0, 1]; labels a rank-1 tensor of raw values.
Tensor load_idx(const std::filesystem::path& path);

// Flat matrix format: 8-byte tag, u64 n, u64 d, n*d f64, all little-endian.
inline constexpr std::string_view kMatrixTag = "IMVCMAT1";

Tensor load_matrix(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const Tensor& t);

/// One integer per line.
std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// Dataset manifest (JSON):
///   {"views": ["view1.mat", "view2-images.idx"], "labels": "labels.txt", "eta": 0.5}
/// Relative paths resolve against the manifest's directory. View files ending in
/// ".idx" or "-ubyte" are read as IDX, others as the flat matrix format. Label
/// files may be IDX or plain text.
struct Manifest {
  std::vector<std::filesystem::path> views;
  std::optional<std::filesystem::path> labels;
  std::optional<double> eta;
};

Manifest read_manifest(const std::filesystem::path& path);
MultiViewDataset load_manifest_dataset(const Manifest& manifest);

}  // namespace imvc
