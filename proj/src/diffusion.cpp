#include "imvc/diffusion.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "imvc/batching.hpp"
#include "imvc/checkpoint.hpp"
#include "imvc/error.hpp"

namespace imvc {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("noise schedule needs T >= 1");
  double running = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta must lie in (0, 1), got " + std::to_string(b));
    alphas_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bars_.push_back(running);
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_min, double beta_max) {
  if (steps == 0) throw ConfigError("noise schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("need 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_min + (beta_max - beta_min) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

std::size_t NoiseSchedule::check(std::size_t t) const {
  if (t < 1 || t > betas_.size()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(betas_.size()) + "]");
  }
  return t;
}

NoiseSchedule build_schedule(const DiffusionConfig& cfg) {
  return NoiseSchedule::linear(cfg.steps, cfg.beta_min, cfg.beta_max);
}

Tensor forward_noising(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  std::vector<std::size_t> ts(z0.rows(), t);
  return forward_noising(z0, ts, eps, sched);
}

Tensor forward_noising(const Tensor& z0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (!z0.same_shape(eps)) throw ShapeError("noise shape " + eps.shape_str() + " differs from latent " + z0.shape_str());
  if (t.size() != z0.rows()) throw ShapeError("one timestep per row is required");
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.rows(); ++i) {
    const double ab = sched.alpha_bar(t[i]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t j = 0; j < z0.cols(); ++j) out(i, j) = a * z0(i, j) + b * eps(i, j);
  }
  return out;
}

Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim) {
  Tensor out = Tensor::matrix(t.size(), dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(half, 1)));
      out(i, 2 * j) = std::sin(static_cast<double>(t[i]) * freq);
      out(i, 2 * j + 1) = std::cos(static_cast<double>(t[i]) * freq);
    }
  }
  return out;
}

DenoiserNet::DenoiserNet(std::size_t latent_dim, const DiffusionConfig& cfg, std::uint64_t seed,
                         const std::string& name)
    : latent_dim_(latent_dim), cfg_(cfg) {
  if (latent_dim == 0 || cfg.tokens == 0 || cfg.token_width == 0 || cfg.attention_width == 0 || cfg.hidden == 0 ||
      cfg.time_dim < 2) {
    throw ConfigError("denoiser widths must be positive");
  }
  Rng rng(seed, name);
  const std::size_t width = cfg.tokens * cfg.token_width;
  in_proj_ = Linear(store_, "in_proj", latent_dim, width, true, false, rng);
  context_proj_ = Linear(store_, "context_proj", latent_dim, width, true, false, rng);
  time1_ = Linear(store_, "time.0", cfg.time_dim, width, true, true, rng);
  time2_ = Linear(store_, "time.1", width, width, true, false, rng);
  attention_ = AttentionBlock(store_, "attention", cfg.token_width, cfg.token_width, cfg.attention_width, rng);
  attn_out_ = Linear(store_, "attention.out", cfg.tokens * cfg.attention_width, width, true, false, rng);
  for (std::size_t b = 0; b < cfg.trunk_blocks; ++b) {
    const std::string p = "trunk." + std::to_string(b);
    trunk_.push_back({Linear(store_, p + ".0", width, cfg.hidden, true, true, rng),
                      Linear(store_, p + ".1", cfg.hidden, width, true, false, rng)});
  }
  head_ = Linear(store_, "head", width, latent_dim, true, false, rng);
}

Var DenoiserNet::predict(const Var& z_t, std::span<const std::size_t> t, const Var& cond) const {
  const std::size_t n = z_t.rows();
  if (z_t.cols() != latent_dim_ || cond.cols() != latent_dim_ || cond.rows() != n || t.size() != n) {
    throw ShapeError("denoiser input shapes: z_t " + z_t.value().shape_str() + ", cond " + cond.value().shape_str());
  }
  const std::size_t h = cfg_.tokens;
  Var temb = time2_.forward(ag::relu(time1_.forward(constant(timestep_embedding(t, cfg_.time_dim)))));
  Var x = ag::add(in_proj_.forward(z_t), temb);
  Var queries = ag::reshape(x, n * h, cfg_.token_width);
  Var context = ag::reshape(context_proj_.forward(cond), n * h, cfg_.token_width);
  Var attended = attention_.forward_grouped(queries, context, h, h);
  x = ag::add(x, attn_out_.forward(ag::reshape(attended, n, h * cfg_.attention_width)));
  for (const auto& block : trunk_) x = ag::add(x, block[1].forward(ag::relu(block[0].forward(x))));
  Var out = head_.forward(ag::relu(x));
  require_finite(out.value(), "denoiser output");
  return out;
}

Var diffusion_loss_fixed(const EpsilonModel& net, const Tensor& z_src, const Tensor& z_cond,
                         std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (z_src.rows() == 0) throw ConfigError("diffusion loss needs at least one complete row");
  if (!z_src.same_shape(z_cond)) throw ShapeError("source and condition latents differ in shape");
  const Tensor z_t = forward_noising(z_src, t, eps, sched);
  Var pred = net.predict(constant(z_t), t, constant(z_cond));
  Var loss = ag::scale(ag::sum(ag::square(ag::sub(constant(eps), pred))), 1.0 / static_cast<double>(z_src.rows()));
  require_finite(loss.value(), "diffusion loss");
  return loss;
}

Var diffusion_loss(const EpsilonModel& net, const Tensor& z_src, const Tensor& z_cond, const NoiseSchedule& sched,
                   Rng& rng) {
  std::vector<std::size_t> t(z_src.rows());
  for (auto& ti : t) ti = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(sched.steps())));
  Tensor eps(z_src.shape());
  for (double& e : eps.data()) e = rng.normal();
  return diffusion_loss_fixed(net, z_src, z_cond, t, eps, sched);
}

Tensor conditional_denoise_step(const EpsilonModel& net, const Tensor& z_t, std::size_t t, const Tensor& z_cond,
                                const NoiseSchedule& sched, std::span<Rng> row_rngs, bool stochastic) {
  const double beta = sched.beta(t), alpha = sched.alpha(t), ab = sched.alpha_bar(t);
  if (stochastic && t > 1 && row_rngs.size() != z_t.rows()) throw ShapeError("one RNG stream per row is required");
  Tensor eps_hat;
  {
    NoGradGuard guard;
    const std::vector<std::size_t> ts(z_t.rows(), t);
    eps_hat = net.predict(constant(z_t), ts, constant(z_cond)).value();
  }
  const double coef = beta / std::sqrt(1.0 - ab);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = (stochastic && t > 1) ? std::sqrt(beta) : 0.0;
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.rows(); ++i)
    for (std::size_t j = 0; j < z_t.cols(); ++j) {
      out(i, j) = inv_sqrt_alpha * (z_t(i, j) - coef * eps_hat(i, j));
      if (sigma > 0.0) out(i, j) += sigma * row_rngs[i].normal();
    }
  require_finite(out, "sampler state");
  return out;
}

Tensor sample_conditional(const EpsilonModel& net, const Tensor& z_cond, const NoiseSchedule& sched,
                          std::span<const std::size_t> row_ids, std::uint64_t seed) {
  if (row_ids.size() != z_cond.rows()) throw ShapeError("one row id per conditioning row is required");
  std::vector<Rng> rngs;
  rngs.reserve(row_ids.size());
  for (auto id : row_ids) rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(id)));
  Tensor z(z_cond.shape());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) = rngs[i].normal();
  for (std::size_t t = sched.steps(); t >= 1; --t) z = conditional_denoise_step(net, z, t, z_cond, sched, rngs);
  return z;
}

Tensor LatentScaler::forward(const Tensor& z) const {
  Tensor out = z;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = (z(i, j) - mean[j]) / scale[j];
  return out;
}

Tensor LatentScaler::inverse(const Tensor& z) const {
  Tensor out = z;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = z(i, j) * scale[j] + mean[j];
  return out;
}

LatentScaler LatentScaler::fit(const Tensor& z) {
  LatentScaler s;
  const std::size_t n = z.rows(), d = z.cols();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  if (n == 0) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += z(i, j) / static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (z(i, j) - s.mean[j]) * (z(i, j) - s.mean[j]);
    var /= static_cast<double>(n);
    s.scale[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

DenoiserPair::DenoiserPair(std::size_t latent_dim, const DiffusionConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), schedule_(build_schedule(cfg)) {
  nets_.reserve(2);
  nets_.emplace_back(latent_dim, cfg, seed, "denoiser/to_view1");
  nets_.emplace_back(latent_dim, cfg, seed, "denoiser/to_view2");
  for (auto& s : scalers_) {
    s.mean.assign(latent_dim, 0.0);
    s.scale.assign(latent_dim, 1.0);
  }
}

void DenoiserPair::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (std::size_t v = 0; v < 2; ++v) {
    save_checkpoint(dir / ("denoiser_to_view" + std::to_string(v + 1) + ".ckpt"), nets_[v].params());
  }
  nlohmann::json j;
  j["steps"] = schedule_.steps();
  j["betas"] = schedule_.betas();
  for (std::size_t v = 0; v < 2; ++v) {
    j["scalers"].push_back({{"mean", scalers_[v].mean}, {"scale", scalers_[v].scale}});
  }
  std::ofstream(dir / "schedule.json") << j.dump(2) << '\n';
}

void DenoiserPair::load(const std::filesystem::path& dir) {
  for (std::size_t v = 0; v < 2; ++v) {
    load_checkpoint(dir / ("denoiser_to_view" + std::to_string(v + 1) + ".ckpt"), nets_[v].params());
  }
  std::ifstream is(dir / "schedule.json");
  if (!is) throw Error("missing schedule.json in " + dir.string());
  const nlohmann::json j = nlohmann::json::parse(is);
  schedule_ = NoiseSchedule(j.at("betas").get<std::vector<double>>());
  for (std::size_t v = 0; v < 2; ++v) {
    scalers_[v].mean = j.at("scalers").at(v).at("mean").get<std::vector<double>>();
    scalers_[v].scale = j.at("scalers").at(v).at("scale").get<std::vector<double>>();
  }
  trained_ = true;
}

DiffusionCurves train_stage2(DenoiserPair& nets, const LatentBank& latents, const MaskMatrix& mask,
                             const TrainConfig& cfg) {
  if (latents.num_views() != 2 || mask.views() != 2) throw ConfigError("diffusion completion supports two views");
  const std::vector<std::size_t> complete = mask.complete_rows();
  if (complete.empty()) throw ConfigError("no complete rows to train the denoisers on");
  for (std::size_t v = 0; v < 2; ++v) {
    std::vector<std::size_t> seen;
    for (std::size_t i = 0; i < mask.rows(); ++i)
      if (mask.observed(i, v)) seen.push_back(i);
    nets.scalers()[v] = LatentScaler::fit(latents.z[v].gather_rows(seen));
  }
  DiffusionCurves curves;
  for (std::size_t v = 0; v < 2; ++v) {
    const std::size_t u = 1 - v;
    const Tensor src = nets.scalers()[v].forward(latents.z[v].gather_rows(complete));
    const Tensor cond = nets.scalers()[u].forward(latents.z[u].gather_rows(complete));
    DenoiserNet& net = nets.target(v);
    const std::string tag = "stage2/to_view" + std::to_string(v + 1);
    Rng batch_rng(cfg.seed, tag + "/batches");
    Rng noise_rng(cfg.seed, tag + "/noise");
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      double total = 0.0;
      for (const auto& batch : shuffled_batches(all_rows(complete.size()), cfg.batch_size, batch_rng)) {
        Var loss = diffusion_loss(net, src.gather_rows(batch), cond.gather_rows(batch), nets.schedule(), noise_rng);
        if (loss.item() > kDivergenceThreshold) throw NumericError("diffusion loss diverged at epoch " + std::to_string(epoch));
        total += loss.item() * static_cast<double>(batch.size());
        loss.backward();
        adamw_step(net.params(), cfg.optimizer);
      }
      curves.per_target[v].push_back(total / static_cast<double>(complete.size()));
    }
  }
  nets.mark_trained();
  return curves;
}

LatentBank impute_missing(const DenoiserPair& nets, const LatentBank& latents, const MaskMatrix& mask,
                          std::uint64_t seed) {
  if (latents.num_views() != 2 || mask.views() != 2) throw ConfigError("diffusion completion supports two views");
  if (!nets.trained()) throw ConfigError("denoisers must be trained before imputation");
  LatentBank out = latents;
  for (std::size_t i = 0; i < mask.rows(); ++i) {
    if (mask.row_sum(i) == 0) throw ConfigError("sample " + std::to_string(i) + " has no observed view");
  }
  for (std::size_t v = 0; v < 2; ++v) {
    const std::size_t u = 1 - v;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mask.rows(); ++i)
      if (!mask.observed(i, v)) rows.push_back(i);
    if (rows.empty()) continue;
    const Tensor cond = nets.scalers()[u].forward(latents.z[u].gather_rows(rows));
    const std::uint64_t stream = derive_seed(seed, "impute/to_view" + std::to_string(v + 1));
    const Tensor z = nets.scalers()[v].inverse(sample_conditional(nets.target(v), cond, nets.schedule(), rows, stream));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::ranges::copy(z.row(r), out.z[v].row(rows[r]).begin());
      out.set(rows[r], v, LatentStatus::imputed);
    }
  }
  return out;
}

}  // namespace imvc
