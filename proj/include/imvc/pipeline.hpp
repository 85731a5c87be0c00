#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imvc/autoencoder.hpp"
#include "imvc/contrastive.hpp"
#include "imvc/dataset.hpp"
#include "imvc/diffusion.hpp"
#include "imvc/metrics.hpp"

namespace imvc {

enum class ImputationMode { diffusion, zero_padding, none };

struct ExperimentConfig {
  /// Exactly one source: a synthetic generator or a dataset manifest.
  std::optional<SyntheticSpec> synthetic = SyntheticSpec{};
  std::optional<std::filesystem::path> manifest;
  double eta = 0.5;
  std::uint64_t seed = 0;
  AutoencoderConfig autoencoder{};
  TrainConfig stage1{};
  TrainConfig stage2{};
  TrainConfig stage3{};
  DiffusionConfig diffusion{};
  HeadsConfig heads{};
  ImputationMode imputation = ImputationMode::diffusion;
  std::filesystem::path output_dir;

  ExperimentConfig();
  std::size_t clusters() const { return heads.clusters; }
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys take defaults; unknown keys are an error.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sub-seed for a named stream of a run: hash of (seed, name, eta).
std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view name);

struct RunRecord {
  std::string variant = "full";
  nlohmann::json config;
  TrainingCurve stage1_curve;
  std::array<TrainingCurve, 2> stage2_curves;
  TrainingCurve stage3_curve;
  std::optional<ClusterScores> metrics;
  std::vector<int> predictions;
  /// L_rec + L_dm + L_clu from the stage-final epoch losses (stages that did not run count 0).
  double final_objective = 0.0;
  std::map<std::string, std::string> checkpoints;
  std::map<std::string, double> seconds;
  /// Parameter digests before/after each stage, for isolation checks.
  std::map<std::string, std::uint64_t> digests;
  std::string error;

  nlohmann::json to_json() const;
};

/// Everything a finished pipeline run holds in memory.
struct TrainedPipeline {
  MultiViewDataset data;
  MaskMatrix mask;
  std::vector<ViewAutoencoder> autoencoders;
  std::optional<DenoiserPair> denoisers;
  std::optional<ClusterHeads> heads;
  LatentBank completed;
  RunRecord record;
};

MultiViewDataset load_dataset(const ExperimentConfig& cfg);

/// Stage 1, completion (per cfg.imputation), stage 3 and fused prediction.
/// Writes checkpoints and records under cfg.output_dir when it is non-empty.
TrainedPipeline train_pipeline(const ExperimentConfig& cfg);
RunRecord run_experiment(const ExperimentConfig& cfg);

/// Reloads a run directory written by train_pipeline and re-derives predictions and metrics.
RunRecord evaluate_run(const std::filesystem::path& run_dir);

/// One run per eta with eta-derived sub-seeds. Failed runs carry `error` and the others continue.
std::vector<RunRecord> sweep_missing_rate(const ExperimentConfig& cfg, const std::vector<double>& etas);
std::vector<double> default_sweep_etas();

/// Four variants: rec (k-means on zero-padded latents), rec+dm (k-means on
/// diffusion-completed latents), rec+clu (heads on zero-padded latents), full.
std::vector<RunRecord> ablate(const ExperimentConfig& cfg);

struct Projection {
  Tensor coords;  // n x 2
  double explained[2] = {0.0, 0.0};
};

/// Top-2 principal components.
Projection pca_projection(const Tensor& x);
/// CSV with header "x,y,label".
void write_projection_csv(const std::filesystem::path& path, const Projection& p, const std::vector<int>& labels);

/// Metrics record: {"acc":..,"nmi":..,"ari":..} plus run metadata.
nlohmann::json metrics_record(const RunRecord& r);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_curve_csv(const std::filesystem::path& path, const std::vector<TrainingCurve>& curves,
                     const std::vector<std::string>& names);

/// Output root: $IMVCDC_OUTPUT_ROOT when set, otherwise `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

}  // namespace imvc
