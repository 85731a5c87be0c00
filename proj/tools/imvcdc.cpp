#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "imvc/error.hpp"
#include "imvc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace imvc;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON); defaults apply to missing keys");
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c, const std::string& sub) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw ConfigError("config file not found: " + c.config);
    cfg = load_config(c.config);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) {
    cfg.output_dir = c.out;
  } else if (cfg.output_dir.empty()) {
    cfg.output_dir = output_root("runs") / sub;
  }
  return cfg;
}

void print_metrics(const RunRecord& r) { std::cout << metrics_record(r).dump() << '\n'; }

int gen_data(const Common& c) {
  ExperimentConfig cfg = resolve(c, "data");
  if (!cfg.synthetic) throw ConfigError("gen-data needs a synthetic dataset spec");
  const MultiViewDataset d = load_dataset(cfg);
  fs::create_directories(cfg.output_dir);
  nlohmann::json m;
  for (std::size_t v = 0; v < d.num_views(); ++v) {
    const std::string name = "view" + std::to_string(v + 1) + ".mat";
    save_matrix(cfg.output_dir / name, d.views[v]);
    m["views"].push_back(name);
  }
  save_labels(cfg.output_dir / "labels.txt", *d.labels);
  m["labels"] = "labels.txt";
  m["eta"] = cfg.eta;
  write_json(cfg.output_dir / "manifest.json", m);
  std::cout << (cfg.output_dir / "manifest.json").string() << '\n';
  return 0;
}

int train(const Common& c) {
  const ExperimentConfig cfg = resolve(c, "train");
  print_metrics(run_experiment(cfg));
  return 0;
}

int evaluate(const Common& c, const std::string& run) {
  const fs::path dir = run.empty() ? fs::path(c.out) : fs::path(run);
  if (dir.empty()) throw ConfigError("evaluate needs --run <dir>");
  const RunRecord r = evaluate_run(dir);
  if (!c.out.empty() && !run.empty()) {
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "metrics.json", metrics_record(r));
  }
  print_metrics(r);
  return 0;
}

int sweep(const Common& c, std::vector<double> etas) {
  const ExperimentConfig cfg = resolve(c, "sweep");
  if (etas.empty()) etas = default_sweep_etas();
  int failed = 0;
  for (const auto& r : sweep_missing_rate(cfg, etas)) {
    print_metrics(r);
    if (!r.error.empty()) ++failed;
  }
  if (failed) std::cerr << "imvcdc: [sweep] " << failed << " run(s) failed\n";
  return failed ? 1 : 0;
}

int ablation(const Common& c) {
  const ExperimentConfig cfg = resolve(c, "ablate");
  for (const auto& r : ablate(cfg)) print_metrics(r);
  return 0;
}

int export_proj(const Common& c, const std::string& run, const std::string& source) {
  if (run.empty()) throw ConfigError("export-proj needs --run <dir>");
  const fs::path dir = run;
  Tensor x;
  if (source == "latents") {
    const Tensor z1 = load_matrix(dir / "latents_view1.mat");
    const Tensor z2 = load_matrix(dir / "latents_view2.mat");
    if (z1.rows() != z2.rows()) throw ShapeError("latent files disagree on row count");
    x = Tensor::matrix(z1.rows(), z1.cols() + z2.cols());
    for (std::size_t i = 0; i < z1.rows(); ++i) {
      for (std::size_t j = 0; j < z1.cols(); ++j) x(i, j) = z1(i, j);
      for (std::size_t j = 0; j < z2.cols(); ++j) x(i, z1.cols() + j) = z2(i, j);
    }
  } else {
    x = load_matrix(source);
  }
  std::vector<int> labels;
  if (fs::exists(dir / "config.json")) {
    const MultiViewDataset d = load_dataset(config_from_json(nlohmann::json::parse(std::ifstream(dir / "config.json"))));
    if (d.labels) labels = *d.labels;
  }
  if (labels.empty() && fs::exists(dir / "predictions.txt")) labels = load_labels(dir / "predictions.txt");
  const Projection p = pca_projection(x);
  const fs::path out = c.out.empty() ? dir / "projection.csv" : fs::path(c.out);
  write_projection_csv(out, p, labels);
  std::cout << out.string() << " explained " << p.explained[0] << ' ' << p.explained[1] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imvcdc: incomplete multi-view clustering with diffusion completion"};
  app.require_subcommand(1);
  Common c;
  std::string run, source = "latents";
  std::vector<double> etas;

  auto* g = app.add_subcommand("gen-data", "write a synthetic dataset and manifest");
  auto* t = app.add_subcommand("train", "run the staged pipeline");
  auto* e = app.add_subcommand("evaluate", "reload a run directory and recompute metrics");
  auto* s = app.add_subcommand("sweep", "one run per missing rate");
  auto* a = app.add_subcommand("ablate", "the four ablation variants");
  auto* x = app.add_subcommand("export-proj", "2-D PCA coordinates as CSV");
  for (auto* sub : {g, t, e, s, a, x}) add_common(sub, c);
  e->add_option("--run", run, "run directory written by train");
  x->add_option("--run", run, "run directory written by train")->required();
  x->add_option("--source", source, "\"latents\" or a matrix file");
  s->add_option("--etas", etas, "missing rates (default 0.3 .. 0.9)")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return gen_data(c);
    if (*t) return train(c);
    if (*e) return evaluate(c, run);
    if (*s) return sweep(c, etas);
    if (*a) return ablation(c);
    if (*x) return export_proj(c, run, source);
  } catch (const StageError& err) {
    std::cerr << "imvcdc: " << err.what() << '\n';
    return 1;
  } catch (const ConfigError& err) {
    std::cerr << "imvcdc: [config] " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "imvcdc: [io] " << err.what() << '\n';
    return 1;
  }
  return 0;
}
