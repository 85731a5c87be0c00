#pragma once

#include <cstdint>
#include <vector>

#include "imvc/dataset.hpp"
#include "imvc/nn.hpp"
#include "imvc/optim.hpp"

namespace imvc {

struct AutoencoderConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden{64};
};

/// Encoder f and decoder g for one view. Owns its parameters, so updating one
/// view's autoencoder can never touch another's.
class ViewAutoencoder {
 public:
  ViewAutoencoder(std::size_t view_dim, const AutoencoderConfig& cfg, std::uint64_t seed, const std::string& name);
  ViewAutoencoder(ViewAutoencoder&&) = default;
  ViewAutoencoder& operator=(ViewAutoencoder&&) = default;
  ViewAutoencoder(const ViewAutoencoder&) = delete;
  ViewAutoencoder& operator=(const ViewAutoencoder&) = delete;

  Var encode(const Var& x) const { return encoder_.forward(x); }
  Var decode(const Var& z) const { return decoder_.forward(z); }
  /// Inference-only encoding.
  Tensor encode(const Tensor& x) const;

  std::size_t view_dim() const { return view_dim_; }
  std::size_t latent_dim() const { return latent_dim_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  ParamStore store_;
  Mlp encoder_, decoder_;
  std::size_t view_dim_, latent_dim_;
};

enum class LatentStatus : std::uint8_t { observed, imputed, zero_padded, absent };

/// Per-view latent matrices with a status flag for every (sample, view) entry.
struct LatentBank {
  std::vector<Tensor> z;
  std::vector<LatentStatus> status;  // row-major n x V

  std::size_t size() const { return z.empty() ? 0 : z.front().rows(); }
  std::size_t num_views() const { return z.size(); }
  LatentStatus at(std::size_t i, std::size_t v) const { return status[i * z.size() + v]; }
  void set(std::size_t i, std::size_t v, LatentStatus s) { status[i * z.size() + v] = s; }
  std::size_t count(LatentStatus s) const;
  /// Views concatenated column-wise, n x (V * d_z).
  Tensor concatenated() const;
};

/// Sum over views and observed samples of the squared reconstruction error.
/// Rows with mask 0 contribute exactly zero.
Var reconstruction_loss(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask);

/// Encodes observed entries (status observed); missing entries are zero rows with status absent.
LatentBank encode_bank(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask);

/// Missing entries are the encoding of an all-zero input, status zero_padded.
LatentBank encode_zero_padded(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data,
                              const MaskMatrix& mask);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  AdamWConfig optimizer{};
  std::uint64_t seed = 0;
};

/// Epoch-mean losses, one entry per epoch.
using TrainingCurve = std::vector<double>;

/// Stage 1: minimises the masked reconstruction loss with AdamW. The reported
/// epoch loss is the summed loss divided by the number of observed entries.
TrainingCurve train_stage1(std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask,
                           const TrainConfig& cfg);

inline constexpr double kDivergenceThreshold = 1e6;

}  // namespace imvc
