// SPDX-License-Identifier: Apache-2.0
// sganet: generate / train / score / eval / run / sweep.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "sganet/pipeline.hpp"
#include "sganet/synth.hpp"

namespace fs = std::filesystem;
using namespace sganet;

namespace {

struct GenerateArgs {
  fs::path out;
  std::string scene = "sphere";
  int views = 12;
  int normal = 1;
  int anomalous = 12;
  int test_normal = -1;
  int height = 128;
  int width = 128;
  double defect_radius = 0.18;
  std::uint64_t seed = 1;
  std::string category = "synthetic";
  bool force = false;
};

// Flag values stay unset unless given, so they only override the config file when present.
struct ExperimentArgs {
  std::string config;
  std::optional<std::string> data, train_dir, test_dir, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool force = false;

  std::optional<std::string> extractor, features_root;
  std::optional<int> d2d, d3d, patch_px;

  std::optional<double> alpha, lambda_sspa, lambda_mvga, lr, depth_tol;
  std::optional<int> k, n, steps;
  std::optional<std::string> optimizer;
  bool no_view = false, no_diff = false, no_cyclic = false, residual = false, shared = false;

  std::optional<double> coreset, sigma, voxel_size;
  std::optional<std::string> bank;
  std::optional<std::vector<double>> aupro_limits;
  bool pgm = false, no_point_metrics = false;

  std::string axis;
};

void add_experiment_options(CLI::App* cmd, ExperimentArgs& a) {
  cmd->add_option("--config", a.config, "JSON experiment config; flags override it")->check(CLI::ExistingFile);
  cmd->add_option("--data", a.data, "dataset root holding train/ and test/");
  cmd->add_option("--train-dir", a.train_dir, "training split (default <data>/train)");
  cmd->add_option("--test-dir", a.test_dir, "test split (default <data>/test)");
  cmd->add_option("--out", a.out, "run directory");
  cmd->add_option("--seed", a.seed, "training seed");
  cmd->add_option("--threads", a.threads, "worker cap")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", a.force, "overwrite existing outputs");

  cmd->add_option("--extractor", a.extractor, "toy | precomputed")->check(CLI::IsMember({"toy", "precomputed"}));
  cmd->add_option("--features-root", a.features_root, "precomputed feature directory");
  cmd->add_option("--d2d", a.d2d, "2D feature dim (toy extractor)");
  cmd->add_option("--d3d", a.d3d, "3D feature dim (toy extractor)");
  cmd->add_option("--patch-px", a.patch_px, "patch size in pixels (toy extractor)");

  cmd->add_option("--alpha", a.alpha, "modality weight for candidate selection");
  cmd->add_option("--k", a.k, "candidates kept per adjacent view");
  cmd->add_option("--n-views", a.n, "neighbouring views per side for geometric alignment");
  cmd->add_option("--lambda-sspa", a.lambda_sspa, "weight of the cross-modal alignment loss");
  cmd->add_option("--lambda-mvga", a.lambda_mvga, "weight of the geometric alignment loss");
  cmd->add_option("--steps", a.steps, "optimizer steps");
  cmd->add_option("--lr", a.lr, "learning rate");
  cmd->add_option("--optimizer", a.optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
  cmd->add_option("--depth-tol", a.depth_tol, "relative depth tolerance of the occlusion test");
  cmd->add_flag("--no-view", a.no_view, "drop the per-view alignment term");
  cmd->add_flag("--no-diff", a.no_diff, "drop the differential alignment term");
  cmd->add_flag("--no-cyclic", a.no_cyclic, "treat the view ring as open");
  cmd->add_flag("--residual", a.residual, "add the input feature to the refined feature");
  cmd->add_flag("--shared", a.shared, "share projections across modalities");

  cmd->add_option("--coreset", a.coreset, "fraction of bank rows kept, in (0, 1]");
  cmd->add_option("--sigma", a.sigma, "anomaly-map smoothing sigma in pixels");
  cmd->add_option("--bank", a.bank, "fused | 2d | 3d")->check(CLI::IsMember({"fused", "2d", "3d"}));
  cmd->add_flag("--pgm", a.pgm, "also write PGM heatmaps");
  cmd->add_option("--aupro-limits", a.aupro_limits, "FPR integration limits");
  cmd->add_option("--voxel-size", a.voxel_size, "voxel edge for point-projected metrics");
  cmd->add_flag("--no-point-metrics", a.no_point_metrics, "skip point-projected metrics");
}

template <typename T, typename U>
void apply(const std::optional<T>& v, U& dst) {
  if (v) dst = static_cast<U>(*v);
}

ExperimentConfig build_config(const ExperimentArgs& a) {
  ExperimentConfig c;
  if (!a.config.empty()) c = experiment_from_json(read_json(a.config));
  apply(a.data, c.data);
  apply(a.train_dir, c.train_dir);
  apply(a.test_dir, c.test_dir);
  apply(a.out, c.out);
  apply(a.seed, c.seed);
  apply(a.threads, c.threads);
  c.force = c.force || a.force;
  if (a.extractor) c.extractor.kind = *a.extractor == "toy" ? ExtractorKind::kToy : ExtractorKind::kPrecomputed;
  apply(a.features_root, c.extractor.root);
  apply(a.d2d, c.extractor.d_2d);
  apply(a.d3d, c.extractor.d_3d);
  apply(a.patch_px, c.extractor.patch_px);
  apply(a.alpha, c.train.alpha);
  apply(a.k, c.train.k);
  apply(a.n, c.train.n);
  apply(a.lambda_sspa, c.train.lambda_sspa);
  apply(a.lambda_mvga, c.train.lambda_mvga);
  apply(a.steps, c.train.steps);
  apply(a.lr, c.train.lr);
  apply(a.depth_tol, c.train.depth_tol);
  if (a.optimizer) c.train.optimizer = *a.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  if (a.no_view) c.train.use_view = false;
  if (a.no_diff) c.train.use_diff = false;
  if (a.no_cyclic) c.train.cyclic = false;
  if (a.residual) c.train.residual = true;
  if (a.shared) c.train.shared_params = true;
  apply(a.coreset, c.coreset_ratio);
  apply(a.sigma, c.map.sigma);
  if (a.bank) {
    c.bank = *a.bank == "2d" ? scoring::BankModalities::k2DOnly
             : *a.bank == "3d" ? scoring::BankModalities::k3DOnly
                               : scoring::BankModalities::kFused;
  }
  c.pgm = c.pgm || a.pgm;
  apply(a.aupro_limits, c.eval.aupro_limits);
  apply(a.voxel_size, c.eval.voxel_size);
  if (a.no_point_metrics) c.eval.point_metrics = false;
  return c;
}

void print_report(const metrics::EvalReport& r) {
  std::cout << metrics::to_json(r.overall, r.options).dump(2) << '\n';
}

int run_generate(const GenerateArgs& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  if (fs::exists(g.out / "dataset.json") && !g.force) {
    throw UsageError((g.out / "dataset.json").string() + " already exists; pass --force to overwrite");
  }
  if (g.force) {
    fs::remove_all(g.out / "train");
    fs::remove_all(g.out / "test");
  }
  synth::SceneSpec scene;
  scene.shape.kind = synth::parse_shape_kind(g.scene);
  if (scene.shape.kind == synth::ShapeKind::kBox) scene.shape.size = {0.8, 0.8, 0.8};
  scene.ring.num_views = g.views;
  scene.height = g.height;
  scene.width = g.width;
  scene.seed = g.seed;
  synth::DatasetOptions opt;
  opt.n_normal = g.normal;
  opt.n_anomalous = g.anomalous;
  opt.n_test_normal = g.test_normal;
  opt.defect_radius = g.defect_radius;
  opt.category = g.category;
  opt.seed = g.seed;
  synth::generate_dataset(scene, opt, g.out);
  std::cout << "wrote " << g.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view multimodal anomaly detection engine"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "render a synthetic multi-view dataset");
  generate->add_option("--out", gen.out, "dataset root")->required();
  generate->add_option("--scene", gen.scene, "sphere | cylinder | box")
      ->check(CLI::IsMember({"sphere", "cylinder", "box"}));
  generate->add_option("--views", gen.views, "views on the camera ring")->check(CLI::PositiveNumber);
  generate->add_option("--normal", gen.normal, "normal training samples");
  generate->add_option("--anomalous", gen.anomalous, "anomalous test samples");
  generate->add_option("--test-normal", gen.test_normal, "normal test samples (default: same as --anomalous)");
  generate->add_option("--height", gen.height, "image height");
  generate->add_option("--width", gen.width, "image width");
  generate->add_option("--defect-radius", gen.defect_radius, "defect radius in world units");
  generate->add_option("--seed", gen.seed, "dataset seed");
  generate->add_option("--category", gen.category, "category name");
  generate->add_flag("--force", gen.force, "overwrite an existing dataset");

  ExperimentArgs args;
  auto* train = app.add_subcommand("train", "fit the refinement projections on normal samples");
  auto* score = app.add_subcommand("score", "build the memory bank and score the test split");
  auto* eval = app.add_subcommand("eval", "compute the evaluation report from stored scores");
  auto* run = app.add_subcommand("run", "train, score and eval in one go");
  auto* sweep = app.add_subcommand("sweep", "ablation sweep over k, N or the loss subsets");
  for (auto* cmd : {train, score, eval, run, sweep}) add_experiment_options(cmd, args);
  sweep->add_option("--axis", args.axis, "k | N | losses")->required()->check(CLI::IsMember({"k", "N", "losses"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return run_generate(gen);
    const auto config = build_config(args);
    if (train->parsed()) {
      std::cout << to_json(run_train(config)).dump(2) << '\n';
    } else if (score->parsed()) {
      const auto j = run_score(config);
      std::cout << "scored " << j.at("samples").size() << " samples against a bank of " << j.at("bank_size")
                << " rows\n";
    } else if (eval->parsed()) {
      print_report(run_eval(config));
    } else if (run->parsed()) {
      print_report(run_all(config));
    } else if (sweep->parsed()) {
      const auto rows = run_sweep(config, parse_sweep_axis(args.axis));
      for (const auto& r : rows) {
        std::cout << r.label << "  i_auroc=" << r.report.overall.i_auroc << "  p_auroc=" << r.report.overall.p_auroc
                  << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
