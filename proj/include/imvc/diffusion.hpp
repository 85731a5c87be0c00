#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "imvc/autoencoder.hpp"
#include "imvc/nn.hpp"
#include "imvc/rng.hpp"

namespace imvc {

/// Linear-beta DDPM schedule. Timesteps are 1-based: t in [1, T].
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// Betas must lie strictly inside (0, 1).
  explicit NoiseSchedule(std::vector<double> betas);
  static NoiseSchedule linear(std::size_t steps, double beta_min, double beta_max);

  std::size_t steps() const { return betas_.size(); }
  double beta(std::size_t t) const { return betas_.at(check(t) - 1); }
  double alpha(std::size_t t) const { return alphas_.at(check(t) - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(check(t) - 1); }
  const std::vector<double>& betas() const { return betas_; }

 private:
  std::size_t check(std::size_t t) const;
  std::vector<double> betas_, alphas_, alpha_bars_;
};

struct DiffusionConfig {
  std::size_t steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::size_t tokens = 4;
  std::size_t token_width = 16;
  std::size_t attention_width = 16;
  std::size_t hidden = 64;
  std::size_t time_dim = 32;
  std::size_t trunk_blocks = 2;
};

NoiseSchedule build_schedule(const DiffusionConfig& cfg);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor forward_noising(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);
/// Per-row timesteps.
Tensor forward_noising(const Tensor& z0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched);

/// Anything that predicts the injected noise from (z_t, t, condition).
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual Var predict(const Var& z_t, std::span<const std::size_t> t, const Var& cond) const = 0;
};

/// Sinusoidal embedding of integer timesteps, n x dim.
Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim);

/// Epsilon-prediction network: noisy latent and time go through an input
/// projection into h tokens, cross-attend to h tokens projected from the
/// companion latent, then a residual MLP trunk and a linear head.
class DenoiserNet final : public EpsilonModel {
 public:
  DenoiserNet(std::size_t latent_dim, const DiffusionConfig& cfg, std::uint64_t seed, const std::string& name);
  DenoiserNet(DenoiserNet&&) = default;
  DenoiserNet(const DenoiserNet&) = delete;
  DenoiserNet& operator=(const DenoiserNet&) = delete;

  Var predict(const Var& z_t, std::span<const std::size_t> t, const Var& cond) const override;

  std::size_t latent_dim() const { return latent_dim_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  ParamStore store_;
  std::size_t latent_dim_;
  DiffusionConfig cfg_;
  Linear in_proj_, context_proj_, time1_, time2_, attn_out_, head_;
  AttentionBlock attention_;
  std::vector<std::array<Linear, 2>> trunk_;
};

/// Mean over rows of ||eps - eps_hat(z_t, t, cond)||^2 with given draws.
Var diffusion_loss_fixed(const EpsilonModel& net, const Tensor& z_src, const Tensor& z_cond,
                         std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched);
/// Draws t ~ U{1..T} per row and eps ~ N(0, I), then evaluates the loss above.
Var diffusion_loss(const EpsilonModel& net, const Tensor& z_src, const Tensor& z_cond, const NoiseSchedule& sched,
                   Rng& rng);

/// One ancestral step z_t -> z_{t-1} with sigma_t^2 = beta_t and no noise at t = 1.
/// `row_rngs` supplies one stream per row; pass `stochastic = false` to force sigma = 0.
Tensor conditional_denoise_step(const EpsilonModel& net, const Tensor& z_t, std::size_t t, const Tensor& z_cond,
                                const NoiseSchedule& sched, std::span<Rng> row_rngs, bool stochastic = true);

/// Full reverse chain from z_T ~ N(0, I). Row i draws from Rng(derive_seed(seed, row_ids[i])).
Tensor sample_conditional(const EpsilonModel& net, const Tensor& z_cond, const NoiseSchedule& sched,
                          std::span<const std::size_t> row_ids, std::uint64_t seed);

/// Per-dimension affine map to zero mean / unit variance, fitted on observed latents.
struct LatentScaler {
  std::vector<double> mean, scale;
  Tensor forward(const Tensor& z) const;
  Tensor inverse(const Tensor& z) const;
  static LatentScaler fit(const Tensor& z);
};

/// Two direction-specific denoisers: target(v) generates view v's latent
/// conditioned on the other view's latent. Two-view only.
class DenoiserPair {
 public:
  DenoiserPair(std::size_t latent_dim, const DiffusionConfig& cfg, std::uint64_t seed);

  DenoiserNet& target(std::size_t v) { return nets_.at(v); }
  const DenoiserNet& target(std::size_t v) const { return nets_.at(v); }
  const NoiseSchedule& schedule() const { return schedule_; }
  const DiffusionConfig& config() const { return cfg_; }
  std::array<LatentScaler, 2>& scalers() { return scalers_; }
  const std::array<LatentScaler, 2>& scalers() const { return scalers_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Writes denoiser_to_view{1,2}.ckpt and schedule.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  DiffusionConfig cfg_;
  NoiseSchedule schedule_;
  std::vector<DenoiserNet> nets_;
  std::array<LatentScaler, 2> scalers_;
  bool trained_ = false;
};

struct DiffusionCurves {
  std::array<TrainingCurve, 2> per_target;
};

/// Stage 2: trains both directions on rows where every view is observed,
/// conditioning on the clean companion latent.
DiffusionCurves train_stage2(DenoiserPair& nets, const LatentBank& latents, const MaskMatrix& mask,
                             const TrainConfig& cfg);

/// Fills every absent entry by ancestral sampling conditioned on the observed
/// companion latent. Observed entries are returned untouched.
LatentBank impute_missing(const DenoiserPair& nets, const LatentBank& latents, const MaskMatrix& mask,
                          std::uint64_t seed);

}  // namespace imvc
