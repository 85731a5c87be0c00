#include "imvc/autoencoder.hpp"

#include <cmath>
#include <sstream>

#include "imvc/batching.hpp"
#include "imvc/error.hpp"

namespace imvc {

namespace {

MlpSpec chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  MlpSpec spec;
  spec.widths.push_back(in);
  spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
  spec.widths.push_back(out);
  spec.hidden.assign(hidden.size(), Activation::relu);
  return spec;
}

}  // namespace

ViewAutoencoder::ViewAutoencoder(std::size_t view_dim, const AutoencoderConfig& cfg, std::uint64_t seed,
                                 const std::string& name)
    : view_dim_(view_dim), latent_dim_(cfg.latent_dim) {
  if (view_dim == 0 || cfg.latent_dim == 0) throw ConfigError("autoencoder widths must be positive");
  Rng rng(seed, name);
  encoder_ = Mlp(store_, "encoder", chain(view_dim, cfg.hidden, cfg.latent_dim), rng);
  std::vector<std::size_t> rev(cfg.hidden.rbegin(), cfg.hidden.rend());
  decoder_ = Mlp(store_, "decoder", chain(cfg.latent_dim, rev, view_dim), rng);
}

Tensor ViewAutoencoder::encode(const Tensor& x) const {
  NoGradGuard guard;
  if (x.rows() == 0) {
    if (x.cols() != view_dim_ && x.size() != 0) throw ShapeError("encoder input width mismatch");
    return Tensor::matrix(0, latent_dim_);
  }
  return encoder_.forward(constant(x)).value();
}

std::size_t LatentBank::count(LatentStatus s) const {
  return static_cast<std::size_t>(std::ranges::count(status, s));
}

Tensor LatentBank::concatenated() const {
  const std::size_t n = size();
  std::size_t width = 0;
  for (const auto& t : z) width += t.cols();
  Tensor out = Tensor::matrix(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (const auto& t : z) {
      std::ranges::copy(t.row(i), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
      off += t.cols();
    }
  }
  return out;
}

Var reconstruction_loss(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask) {
  if (aes.size() != data.num_views() || mask.views() != data.num_views() || mask.rows() != data.size()) {
    throw ShapeError("reconstruction_loss: autoencoders, views and mask disagree");
  }
  Var total;
  for (std::size_t v = 0; v < aes.size(); ++v) {
    Var x = constant(data.views[v]);
    Var recon = aes[v].decode(aes[v].encode(x));
    Var per_row = ag::row_sum(ag::square(ag::sub(x, recon)));
    Var term = ag::sum(ag::mul_col(per_row, constant(mask.column(v))));
    total = total ? ag::add(total, term) : term;
  }
  require_finite(total.value(), "reconstruction loss");
  return total;
}

LatentBank encode_bank(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask) {
  const std::size_t n = data.size(), V = data.num_views();
  if (aes.size() != V || mask.rows() != n || mask.views() != V) throw ShapeError("encode_bank: shape mismatch");
  LatentBank bank;
  bank.status.assign(n * V, LatentStatus::absent);
  bank.z.resize(V);
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (mask.observed(i, v)) rows.push_back(i);
    const Tensor z = aes[v].encode(data.views[v].gather_rows(rows));
    Tensor full = Tensor::matrix(n, aes[v].latent_dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::ranges::copy(z.row(r), full.row(rows[r]).begin());
      bank.set(rows[r], v, LatentStatus::observed);
    }
    bank.z[v] = std::move(full);
  }
  return bank;
}

LatentBank encode_zero_padded(const std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data,
                              const MaskMatrix& mask) {
  LatentBank bank = encode_bank(aes, data, mask);
  for (std::size_t v = 0; v < bank.num_views(); ++v) {
    const Tensor zero_code = aes[v].encode(Tensor::matrix(1, aes[v].view_dim()));
    for (std::size_t i = 0; i < bank.size(); ++i) {
      if (bank.at(i, v) != LatentStatus::absent) continue;
      std::ranges::copy(zero_code.row(0), bank.z[v].row(i).begin());
      bank.set(i, v, LatentStatus::zero_padded);
    }
  }
  return bank;
}

TrainingCurve train_stage1(std::vector<ViewAutoencoder>& aes, const MultiViewDataset& data, const MaskMatrix& mask,
                           const TrainConfig& cfg) {
  data.validate();
  if (aes.size() != data.num_views()) throw ShapeError("one autoencoder per view is required");
  std::size_t observed = 0;
  for (std::size_t v = 0; v < data.num_views(); ++v) observed += data.size() - mask.missing_count(v);
  if (observed == 0) throw ConfigError("no observed entries to reconstruct");

  TrainingCurve curve;
  Rng rng(cfg.seed, "stage1/batches");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& batch : shuffled_batches(all_rows(data.size()), cfg.batch_size, rng)) {
      MultiViewDataset sub;
      MaskMatrix sub_mask(batch.size(), data.num_views());
      for (const auto& view : data.views) sub.views.push_back(view.gather_rows(batch));
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t v = 0; v < data.num_views(); ++v) sub_mask.set(r, v, mask.observed(batch[r], v));
      Var loss = reconstruction_loss(aes, sub, sub_mask);
      if (loss.item() > kDivergenceThreshold) {
        std::ostringstream os;
        os << "reconstruction loss diverged (" << loss.item() << ") at epoch " << epoch << " with lr "
           << cfg.optimizer.lr;
        throw NumericError(os.str());
      }
      epoch_loss += loss.item();
      loss.backward();
      for (auto& ae : aes) adamw_step(ae.params(), cfg.optimizer);
    }
    curve.push_back(epoch_loss / static_cast<double>(observed));
  }
  return curve;
}

}  // namespace imvc
