#include "imvc/pipeline.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <Eigen/Dense>

#include "imvc/checkpoint.hpp"
#include "imvc/error.hpp"

namespace imvc {

using nlohmann::json;

ExperimentConfig::ExperimentConfig() {
  stage1.epochs = 60;
  stage1.batch_size = 64;
  stage1.optimizer.lr = 1e-3;
  stage1.optimizer.weight_decay = 1e-4;
  stage2.epochs = 60;
  stage2.batch_size = 64;
  stage2.optimizer.lr = 2e-3;
  stage2.optimizer.weight_decay = 1e-4;
  stage3.epochs = 60;
  stage3.batch_size = 256;
  stage3.optimizer.lr = 1e-3;
  stage3.optimizer.weight_decay = 1e-4;
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == manifest.has_value()) {
    throw ConfigError("config needs exactly one dataset source (synthetic or manifest)");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (imputation == ImputationMode::none && eta != 0.0) {
    throw ConfigError("imputation mode \"none\" is only valid with eta = 0");
  }
  if (heads.clusters < 2) throw ConfigError("clusters must be >= 2");
  if (!(heads.temperature > 0.0)) throw ConfigError("temperature must be positive");
}

namespace {

const char* mode_name(ImputationMode m) {
  switch (m) {
    case ImputationMode::diffusion:
      return "diffusion";
    case ImputationMode::zero_padding:
      return "zero_padding";
    case ImputationMode::none:
      return "none";
  }
  return "diffusion";
}

ImputationMode parse_mode(const std::string& s) {
  if (s == "diffusion") return ImputationMode::diffusion;
  if (s == "zero_padding") return ImputationMode::zero_padding;
  if (s == "none") return ImputationMode::none;
  throw ConfigError("unknown imputation mode \"" + s + "\"");
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},           {"batch_size", t.batch_size},   {"lr", t.optimizer.lr},
          {"beta1", t.optimizer.beta1},   {"beta2", t.optimizer.beta2},   {"eps", t.optimizer.eps},
          {"weight_decay", t.optimizer.weight_decay}};
}

void train_from_json(const json& j, TrainConfig& t, const std::string& where) {
  check_keys(j, {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay"}, where);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "lr", t.optimizer.lr);
  read(j, "beta1", t.optimizer.beta1);
  read(j, "beta2", t.optimizer.beta2);
  read(j, "eps", t.optimizer.eps);
  read(j, "weight_decay", t.optimizer.weight_decay);
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json j;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    j["dataset"]["synthetic"] = {{"samples", s.samples},
                                 {"latent_dim", s.latent_dim},
                                 {"view_dims", s.view_dims},
                                 {"view_noise", s.view_noise},
                                 {"separation", s.separation},
                                 {"view_correlation", s.view_correlation},
                                 {"private_dim", s.private_dim},
                                 {"private_separation", s.private_separation},
                                 {"squash", s.squash},
                                 {"identity_maps", s.identity_maps}};
  } else if (cfg.manifest) {
    j["dataset"]["manifest"] = cfg.manifest->string();
  }
  j["eta"] = cfg.eta;
  j["seed"] = cfg.seed;
  j["clusters"] = cfg.heads.clusters;
  j["autoencoder"] = {{"latent_dim", cfg.autoencoder.latent_dim}, {"hidden", cfg.autoencoder.hidden}};
  j["stage1"] = train_to_json(cfg.stage1);
  j["stage2"] = train_to_json(cfg.stage2);
  j["stage3"] = train_to_json(cfg.stage3);
  const auto& d = cfg.diffusion;
  j["diffusion"] = {{"steps", d.steps},
                    {"beta_min", d.beta_min},
                    {"beta_max", d.beta_max},
                    {"tokens", d.tokens},
                    {"token_width", d.token_width},
                    {"attention_width", d.attention_width},
                    {"hidden", d.hidden},
                    {"time_dim", d.time_dim},
                    {"trunk_blocks", d.trunk_blocks}};
  j["heads"] = {{"mid_dim", cfg.heads.mid_dim},
                {"feature_dim", cfg.heads.feature_dim},
                {"temperature", cfg.heads.temperature}};
  j["imputation"] = mode_name(cfg.imputation);
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  check_keys(j, {"dataset", "eta", "seed", "clusters", "autoencoder", "stage1", "stage2", "stage3", "diffusion",
                 "heads", "imputation", "output_dir"},
             "config");
  try {
    if (j.contains("dataset")) {
      const json& ds = j.at("dataset");
      check_keys(ds, {"synthetic", "manifest"}, "dataset");
      if (ds.contains("manifest")) {
        cfg.synthetic.reset();
        cfg.manifest = ds.at("manifest").get<std::string>();
      }
      if (ds.contains("synthetic")) {
        const json& s = ds.at("synthetic");
        check_keys(s, {"samples", "latent_dim", "view_dims", "view_noise", "separation", "view_correlation", "private_dim",
                       "private_separation", "squash", "identity_maps"},
                   "dataset.synthetic");
        SyntheticSpec spec;
        read(s, "samples", spec.samples);
        read(s, "latent_dim", spec.latent_dim);
        read(s, "view_dims", spec.view_dims);
        read(s, "view_noise", spec.view_noise);
        read(s, "separation", spec.separation);
        read(s, "view_correlation", spec.view_correlation);
        read(s, "private_dim", spec.private_dim);
        read(s, "private_separation", spec.private_separation);
        read(s, "squash", spec.squash);
        read(s, "identity_maps", spec.identity_maps);
        cfg.synthetic = spec;
      }
    }
    read(j, "eta", cfg.eta);
    read(j, "seed", cfg.seed);
    read(j, "clusters", cfg.heads.clusters);
    if (j.contains("autoencoder")) {
      check_keys(j["autoencoder"], {"latent_dim", "hidden"}, "autoencoder");
      read(j["autoencoder"], "latent_dim", cfg.autoencoder.latent_dim);
      read(j["autoencoder"], "hidden", cfg.autoencoder.hidden);
    }
    if (j.contains("stage1")) train_from_json(j["stage1"], cfg.stage1, "stage1");
    if (j.contains("stage2")) train_from_json(j["stage2"], cfg.stage2, "stage2");
    if (j.contains("stage3")) train_from_json(j["stage3"], cfg.stage3, "stage3");
    if (j.contains("diffusion")) {
      const json& d = j["diffusion"];
      check_keys(d, {"steps", "beta_min", "beta_max", "tokens", "token_width", "attention_width", "hidden", "time_dim",
                     "trunk_blocks"},
                 "diffusion");
      read(d, "steps", cfg.diffusion.steps);
      read(d, "beta_min", cfg.diffusion.beta_min);
      read(d, "beta_max", cfg.diffusion.beta_max);
      read(d, "tokens", cfg.diffusion.tokens);
      read(d, "token_width", cfg.diffusion.token_width);
      read(d, "attention_width", cfg.diffusion.attention_width);
      read(d, "hidden", cfg.diffusion.hidden);
      read(d, "time_dim", cfg.diffusion.time_dim);
      read(d, "trunk_blocks", cfg.diffusion.trunk_blocks);
    }
    if (j.contains("heads")) {
      check_keys(j["heads"], {"mid_dim", "feature_dim", "temperature"}, "heads");
      read(j["heads"], "mid_dim", cfg.heads.mid_dim);
      read(j["heads"], "feature_dim", cfg.heads.feature_dim);
      read(j["heads"], "temperature", cfg.heads.temperature);
    }
    if (j.contains("imputation")) cfg.imputation = parse_mode(j.at("imputation").get<std::string>());
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = config_from_json(j);
  if (cfg.manifest && cfg.manifest->is_relative()) cfg.manifest = path.parent_path() / *cfg.manifest;
  // A manifest may carry its own eta; an explicit config value wins.
  if (cfg.manifest && !j.contains("eta")) {
    if (auto eta = read_manifest(*cfg.manifest).eta) cfg.eta = *eta;
    cfg.validate();
  }
  return cfg;
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view name) {
  return derive_seed(derive_seed(cfg.seed, name), std::bit_cast<std::uint64_t>(cfg.eta));
}

json RunRecord::to_json() const {
  json j;
  j["variant"] = variant;
  j["config"] = config;
  j["curves"]["stage1"] = stage1_curve;
  j["curves"]["stage2_to_view1"] = stage2_curves[0];
  j["curves"]["stage2_to_view2"] = stage2_curves[1];
  j["curves"]["stage3"] = stage3_curve;
  if (metrics) j["metrics"] = {{"acc", metrics->acc}, {"nmi", metrics->nmi}, {"ari", metrics->ari}};
  j["final_objective"] = final_objective;
  j["checkpoints"] = checkpoints;
  j["seconds"] = seconds;
  j["digests"] = digests;
  if (!error.empty()) j["error"] = error;
  return j;
}

MultiViewDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.synthetic) {
    SyntheticSpec spec = *cfg.synthetic;
    spec.clusters = cfg.heads.clusters;
    spec.seed = derive_seed(cfg.seed, "data");
    return generate_synthetic(spec);
  }
  return load_manifest_dataset(read_manifest(*cfg.manifest));
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class F>
auto stage(const std::string& tag, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(tag, e.what());
  }
}

std::vector<ViewAutoencoder> make_autoencoders(const ExperimentConfig& cfg, const MultiViewDataset& data) {
  std::vector<ViewAutoencoder> aes;
  const std::uint64_t seed = stage_seed(cfg, "init/autoencoder");
  for (std::size_t v = 0; v < data.num_views(); ++v) {
    aes.emplace_back(data.views[v].cols(), cfg.autoencoder, seed, "view" + std::to_string(v + 1));
  }
  return aes;
}

TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

std::filesystem::path ae_path(const std::filesystem::path& dir, std::size_t v) {
  return dir / ("autoencoder_view" + std::to_string(v + 1) + ".ckpt");
}

void mask_to_file(const std::filesystem::path& path, const MaskMatrix& mask) {
  Tensor t = Tensor::matrix(mask.rows(), mask.views());
  for (std::size_t i = 0; i < mask.rows(); ++i)
    for (std::size_t v = 0; v < mask.views(); ++v) t(i, v) = mask.observed(i, v) ? 1.0 : 0.0;
  save_matrix(path, t);
}

MaskMatrix mask_from_file(const std::filesystem::path& path, double eta) {
  const Tensor t = load_matrix(path);
  MaskMatrix mask(t.rows(), t.cols(), eta);
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t v = 0; v < t.cols(); ++v) mask.set(i, v, t(i, v) != 0.0);
  return mask;
}

double last(const TrainingCurve& c) { return c.empty() ? 0.0 : c.back(); }

void finish_record(RunRecord& r, const MultiViewDataset& data) {
  double dm = 0.0;
  if (!r.stage2_curves[0].empty()) dm = 0.5 * (last(r.stage2_curves[0]) + last(r.stage2_curves[1]));
  r.final_objective = last(r.stage1_curve) + dm + last(r.stage3_curve);
  if (data.labels && !r.predictions.empty()) r.metrics = score(*data.labels, r.predictions);
}

void write_outputs(const std::filesystem::path& dir, const RunRecord& r, const LatentBank* bank) {
  write_json(dir / "record.json", r.to_json());
  write_json(dir / "metrics.json", metrics_record(r));
  write_curve_csv(dir / "stage1_curve.csv", {r.stage1_curve}, {"loss"});
  if (!r.stage2_curves[0].empty()) {
    write_curve_csv(dir / "stage2_curve.csv", {r.stage2_curves[0], r.stage2_curves[1]}, {"to_view1", "to_view2"});
  }
  if (!r.stage3_curve.empty()) write_curve_csv(dir / "stage3_curve.csv", {r.stage3_curve}, {"loss"});
  if (!r.predictions.empty()) save_labels(dir / "predictions.txt", r.predictions);
  if (bank) {
    for (std::size_t v = 0; v < bank->num_views(); ++v) {
      save_matrix(dir / ("latents_view" + std::to_string(v + 1) + ".mat"), bank->z[v]);
    }
  }
}

}  // namespace

TrainedPipeline train_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  TrainedPipeline p;
  RunRecord& r = p.record;
  r.config = to_json(cfg);
  const std::filesystem::path dir = cfg.output_dir;
  if (!dir.empty()) std::filesystem::create_directories(dir);

  p.data = stage("data", [&] {
    MultiViewDataset d = load_dataset(cfg);
    d.validate();
    if (d.num_views() != 2) throw ConfigError("the pipeline supports exactly two views");
    return d;
  });
  p.mask = stage("data", [&] { return generate_mask(p.data.size(), 2, cfg.eta, stage_seed(cfg, "mask")); });

  auto t0 = Clock::now();
  p.autoencoders = stage("init", [&] { return make_autoencoders(cfg, p.data); });
  r.stage1_curve = stage("stage1", [&] {
    return train_stage1(p.autoencoders, p.data, p.mask, seeded(cfg.stage1, stage_seed(cfg, "stage1")));
  });
  r.seconds["stage1"] = since(t0);
  auto ae_digest = [&p] {
    std::uint64_t h = 0;
    for (const auto& ae : p.autoencoders) h = derive_seed(h, ae.params().digest());
    return h;
  };
  r.digests["autoencoders_after_stage1"] = ae_digest();

  t0 = Clock::now();
  p.completed = stage("completion", [&] {
    switch (cfg.imputation) {
      case ImputationMode::zero_padding:
        return encode_zero_padded(p.autoencoders, p.data, p.mask);
      case ImputationMode::none:
        return encode_bank(p.autoencoders, p.data, p.mask);
      case ImputationMode::diffusion:
        break;
    }
    const LatentBank observed = encode_bank(p.autoencoders, p.data, p.mask);
    p.denoisers.emplace(p.autoencoders[0].latent_dim(), cfg.diffusion, stage_seed(cfg, "init/denoiser"));
    auto curves = stage("stage2", [&] {
      return train_stage2(*p.denoisers, observed, p.mask, seeded(cfg.stage2, stage_seed(cfg, "stage2")));
    });
    r.stage2_curves = curves.per_target;
    return impute_missing(*p.denoisers, observed, p.mask, stage_seed(cfg, "impute"));
  });
  r.seconds["completion"] = since(t0);
  r.digests["autoencoders_after_stage2"] = ae_digest();
  if (p.denoisers) {
    r.digests["denoisers_after_stage2"] =
        derive_seed(p.denoisers->target(0).params().digest(), p.denoisers->target(1).params().digest());
  }

  t0 = Clock::now();
  p.heads.emplace(p.autoencoders[0].latent_dim(), 2, cfg.heads, stage_seed(cfg, "init/heads"));
  r.stage3_curve = stage("stage3", [&] {
    return train_stage3(*p.heads, p.completed, seeded(cfg.stage3, stage_seed(cfg, "stage3")));
  });
  r.seconds["stage3"] = since(t0);
  r.digests["autoencoders_after_stage3"] = ae_digest();
  if (p.denoisers) {
    r.digests["denoisers_after_stage3"] =
        derive_seed(p.denoisers->target(0).params().digest(), p.denoisers->target(1).params().digest());
  }
  r.digests["heads"] = p.heads->params().digest();

  r.predictions = stage("predict", [&] { return assign(*p.heads, p.completed).fused; });
  r.variant = cfg.imputation == ImputationMode::zero_padding ? "rec+clu" : "full";
  finish_record(r, p.data);

  if (!dir.empty()) {
    stage("output", [&] {
      for (std::size_t v = 0; v < p.autoencoders.size(); ++v) {
        save_checkpoint(ae_path(dir, v), p.autoencoders[v].params());
        r.checkpoints["autoencoder_view" + std::to_string(v + 1)] = ae_path(dir, v).string();
      }
      if (p.denoisers) {
        p.denoisers->save(dir / "denoisers");
        r.checkpoints["denoisers"] = (dir / "denoisers").string();
      }
      save_checkpoint(dir / "heads.ckpt", p.heads->params());
      r.checkpoints["heads"] = (dir / "heads.ckpt").string();
      mask_to_file(dir / "mask.mat", p.mask);
      write_json(dir / "config.json", r.config);
      write_outputs(dir, r, &p.completed);
      return 0;
    });
  }
  return p;
}

RunRecord run_experiment(const ExperimentConfig& cfg) { return train_pipeline(cfg).record; }

RunRecord evaluate_run(const std::filesystem::path& run_dir) {
  return stage("evaluate", [&] {
    std::ifstream is(run_dir / "config.json");
    if (!is) throw ConfigError("no config.json in run directory " + run_dir.string());
    const json cj = json::parse(is);
    const ExperimentConfig cfg = config_from_json(cj);
    MultiViewDataset data = load_dataset(cfg);
    data.validate();
    const MaskMatrix mask = mask_from_file(run_dir / "mask.mat", cfg.eta);
    if (mask.rows() != data.size()) throw ShapeError("stored mask does not match the dataset");

    std::vector<ViewAutoencoder> aes = make_autoencoders(cfg, data);
    for (std::size_t v = 0; v < aes.size(); ++v) load_checkpoint(ae_path(run_dir, v), aes[v].params());
    LatentBank bank;
    switch (cfg.imputation) {
      case ImputationMode::zero_padding:
        bank = encode_zero_padded(aes, data, mask);
        break;
      case ImputationMode::none:
        bank = encode_bank(aes, data, mask);
        break;
      case ImputationMode::diffusion: {
        DenoiserPair nets(aes[0].latent_dim(), cfg.diffusion, stage_seed(cfg, "init/denoiser"));
        nets.load(run_dir / "denoisers");
        bank = impute_missing(nets, encode_bank(aes, data, mask), mask, stage_seed(cfg, "impute"));
        break;
      }
    }
    ClusterHeads heads(aes[0].latent_dim(), 2, cfg.heads, stage_seed(cfg, "init/heads"));
    load_checkpoint(run_dir / "heads.ckpt", heads.params());

    RunRecord r;
    r.variant = "evaluate";
    r.config = cj;
    r.predictions = assign(heads, bank).fused;
    if (data.labels) r.metrics = score(*data.labels, r.predictions);
    return r;
  });
}

std::vector<double> default_sweep_etas() { return {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

std::vector<RunRecord> sweep_missing_rate(const ExperimentConfig& cfg, const std::vector<double>& etas) {
  for (double eta : etas) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sweep eta outside [0, 1]: " + std::to_string(eta));
  }
  std::vector<RunRecord> out(etas.size());
  // Runs are independent; nested kernel regions fall back to one thread.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(etas.size()); ++r) {
    const auto idx = static_cast<std::size_t>(r);
    ExperimentConfig run = cfg;
    run.eta = etas[idx];
    if (!cfg.output_dir.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "eta_%.2f", etas[idx]);
      run.output_dir = cfg.output_dir / buf;
    }
    try {
      out[idx] = run_experiment(run);
    } catch (const std::exception& e) {
      out[idx].config = to_json(run);
      out[idx].error = e.what();
    }
  }
  if (!cfg.output_dir.empty()) {
    json table = json::array();
    for (const auto& r : out) table.push_back(metrics_record(r));
    std::filesystem::create_directories(cfg.output_dir);
    write_json(cfg.output_dir / "sweep.json", table);
  }
  return out;
}

std::vector<RunRecord> ablate(const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.imputation = ImputationMode::diffusion;
  cfg.validate();
  const std::filesystem::path dir = cfg.output_dir;

  // The four variants share data, mask and stage 1; rec+dm and full also share stage 2.
  MultiViewDataset data = stage("data", [&] { return load_dataset(cfg); });
  const MaskMatrix mask = generate_mask(data.size(), 2, cfg.eta, stage_seed(cfg, "mask"));
  std::vector<ViewAutoencoder> aes = make_autoencoders(cfg, data);
  const TrainingCurve rec_curve = stage("stage1", [&] {
    return train_stage1(aes, data, mask, seeded(cfg.stage1, stage_seed(cfg, "stage1")));
  });
  const LatentBank padded = encode_zero_padded(aes, data, mask);
  const LatentBank observed = encode_bank(aes, data, mask);
  const std::size_t k = cfg.clusters();

  auto kmeans_labels = [&](const LatentBank& bank) {
    return kmeans(bank.concatenated(), k, stage_seed(cfg, "ablation/kmeans")).labels;
  };
  auto heads_labels = [&](const LatentBank& bank, TrainingCurve& curve) {
    ClusterHeads heads(aes[0].latent_dim(), 2, cfg.heads, stage_seed(cfg, "init/heads"));
    curve = stage("stage3", [&] { return train_stage3(heads, bank, seeded(cfg.stage3, stage_seed(cfg, "stage3"))); });
    return assign(heads, bank).fused;
  };

  std::vector<RunRecord> out(4);
  for (auto& r : out) {
    r.config = to_json(cfg);
    r.stage1_curve = rec_curve;
  }
  out[0].variant = "rec";
  out[0].predictions = kmeans_labels(padded);

  DenoiserPair nets(aes[0].latent_dim(), cfg.diffusion, stage_seed(cfg, "init/denoiser"));
  const auto dm_curves = stage("stage2", [&] {
    return train_stage2(nets, observed, mask, seeded(cfg.stage2, stage_seed(cfg, "stage2")));
  });
  const LatentBank completed = impute_missing(nets, observed, mask, stage_seed(cfg, "impute"));
  out[1].variant = "rec+dm";
  out[1].stage2_curves = dm_curves.per_target;
  out[1].predictions = kmeans_labels(completed);

  out[2].variant = "rec+clu";
  out[2].predictions = heads_labels(padded, out[2].stage3_curve);

  out[3].variant = "full";
  out[3].stage2_curves = dm_curves.per_target;
  out[3].predictions = heads_labels(completed, out[3].stage3_curve);

  for (auto& r : out) finish_record(r, data);
  if (!dir.empty()) {
    json table = json::array();
    for (const auto& r : out) {
      table.push_back(metrics_record(r));
      const auto sub = dir / r.variant;
      std::filesystem::create_directories(sub);
      write_outputs(sub, r, nullptr);
    }
    write_json(dir / "ablation.json", table);
  }
  return out;
}

Projection pca_projection(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw ConfigError("projection needs at least two rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x(i, j);
  m.rowwise() -= m.colwise().mean();
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);
  Projection p;
  p.coords = Tensor::matrix(n, 2);
  const double total = cov.trace();
  if (!(total > 0.0)) return p;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index last = static_cast<Eigen::Index>(d) - 1;
  for (int c = 0; c < 2 && last - c >= 0; ++c) {
    const double lambda = std::max(0.0, eig.eigenvalues()(last - c));
    p.explained[c] = lambda / total;
    if (lambda <= 1e-12 * total) continue;
    const Eigen::VectorXd proj = m * eig.eigenvectors().col(last - c);
    for (std::size_t i = 0; i < n; ++i) p.coords(i, static_cast<std::size_t>(c)) = proj(static_cast<Eigen::Index>(i));
  }
  return p;
}

void write_projection_csv(const std::filesystem::path& path, const Projection& p, const std::vector<int>& labels) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write projection file " + path.string());
  os << "x,y,label\n";
  os.precision(17);
  for (std::size_t i = 0; i < p.coords.rows(); ++i) {
    os << p.coords(i, 0) << ',' << p.coords(i, 1) << ',';
    if (i < labels.size()) os << labels[i];
    os << '\n';
  }
}

json metrics_record(const RunRecord& r) {
  json j;
  j["variant"] = r.variant;
  if (r.config.contains("eta")) j["eta"] = r.config["eta"];
  if (r.config.contains("seed")) j["seed"] = r.config["seed"];
  if (r.metrics) {
    j["acc"] = r.metrics->acc;
    j["nmi"] = r.metrics->nmi;
    j["ari"] = r.metrics->ari;
  }
  j["final_objective"] = r.final_objective;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<TrainingCurve>& curves,
                     const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "epoch";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  os.precision(17);
  std::size_t len = 0;
  for (const auto& c : curves) len = std::max(len, c.size());
  for (std::size_t e = 0; e < len; ++e) {
    os << e + 1;
    for (const auto& c : curves) {
      os << ',';
      if (e < c.size()) os << c[e];
    }
    os << '\n';
  }
}

std::filesystem::path output_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("IMVCDC_OUTPUT_ROOT"); env && *env) return env;
  return fallback;
}

}  // namespace imvc
