// SPDX-License-Identifier: Apache-2.0
#include "sganet/training.hpp"

#include <cmath>
#include <ostream>

namespace sganet {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  if (k < 1) throw UsageError("k must be >= 1");
  if (n < 1) throw UsageError("N must be >= 1");
  if (!(lambda_sspa >= 0.0) || !(lambda_mvga >= 0.0)) throw UsageError("loss weights must be >= 0");
  if (steps < 1) throw UsageError("steps must be >= 1");
  if (!(lr > 0.0)) throw UsageError("learning rate must be > 0");
  if (!(depth_tol > 0.0)) throw UsageError("depth_tol must be > 0");
  if (!(init_noise >= 0.0)) throw UsageError("init_noise must be >= 0");
}

void validate_dims(const TrainConfig& c, int d_2d, int d_3d) {
  if (c.sspa_active() && d_2d != d_3d) {
    throw UsageError("SSPA multiplies 2D and 3D feature maps and needs d_2d == d_3d (got " + std::to_string(d_2d) +
                     " and " + std::to_string(d_3d) + "); set equal dims or lambda_sspa = 0");
  }
  if (c.shared_params && d_2d != d_3d) throw UsageError("shared projections need d_2d == d_3d");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"k", c.k},
          {"n", c.n},
          {"lambda_sspa", c.lambda_sspa},
          {"lambda_mvga", c.lambda_mvga},
          {"steps", c.steps},
          {"lr", c.lr},
          {"optimizer", c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
          {"seed", c.seed},
          {"use_view", c.use_view},
          {"use_diff", c.use_diff},
          {"cyclic", c.cyclic},
          {"residual", c.residual},
          {"shared_params", c.shared_params},
          {"depth_tol", c.depth_tol},
          {"init_noise", c.init_noise}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.alpha = j.value("alpha", c.alpha);
    c.k = j.value("k", c.k);
    c.n = j.value("n", c.n);
    c.lambda_sspa = j.value("lambda_sspa", c.lambda_sspa);
    c.lambda_mvga = j.value("lambda_mvga", c.lambda_mvga);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::kAdam;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::kSgd;
    } else {
      throw UsageError("unknown optimizer '" + opt + "'");
    }
    c.seed = j.value("seed", c.seed);
    c.use_view = j.value("use_view", c.use_view);
    c.use_diff = j.value("use_diff", c.use_diff);
    c.cyclic = j.value("cyclic", c.cyclic);
    c.residual = j.value("residual", c.residual);
    c.shared_params = j.value("shared_params", c.shared_params);
    c.depth_tol = j.value("depth_tol", c.depth_tol);
    c.init_noise = j.value("init_noise", c.init_noise);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  return c;
}

SampleContext prepare_sample(const ViewSet& vs, const ExtractorSpec& extractor, const TrainConfig& config,
                             Warnings* warnings) {
  SampleContext ctx;
  ctx.sample_id = vs.sample_id;
  ctx.features = extract_sample(extractor, vs, warnings);
  validate_dims(config, ctx.features.dim(Modality::k2D), ctx.features.dim(Modality::k3D));
  ctx.candidates = scfrm::select_candidates(ctx.features, config.selection(), warnings);
  ctx.correspondences = mvga::compute_correspondences(vs, ctx.features.grid, config.correspondence_options());
  return ctx;
}

namespace {

LossBreakdown evaluate(const SampleContext& ctx, const ProjectionParamsd& params, const TrainConfig& config,
                       ProjectionParamsd* grad) {
  scfrm::RefineCache<double> cache;
  const auto refined =
      scfrm::refine(ctx.features, ctx.candidates, params, config.refine_options(), grad ? &cache : nullptr);
  LossBreakdown out;
  SampleFeatures<double> g;
  if (grad != nullptr) g = refined.zeros_like();
  auto* gp = grad != nullptr ? &g : nullptr;
  if (config.sspa_active()) {
    out.sspa = sspa::sspa_loss(refined, config.sspa_options(), gp, config.lambda_sspa);
  } else if (refined.dim(Modality::k2D) == refined.dim(Modality::k3D)) {
    // Logged only; contributes nothing to the objective.
    out.sspa = sspa::sspa_loss(refined, config.sspa_options());
    out.sspa.l_sspa = 0.0;
  }
  out.mvga = mvga::mvga_loss(refined, ctx.correspondences, config.lambda_mvga > 0.0 ? gp : nullptr,
                             config.lambda_mvga);
  out.total = config.lambda_sspa * out.sspa.l_sspa + config.lambda_mvga * out.mvga;
  if (grad != nullptr) scfrm::refine_backward(ctx.features, ctx.candidates, params, cache, g, *grad);
  return out;
}

}  // namespace

LossBreakdown total_loss(const SampleContext& ctx, const ProjectionParamsd& params, const TrainConfig& config) {
  return evaluate(ctx, params, config, nullptr);
}

ProjectionParamsd grad_params(const SampleContext& ctx, const ProjectionParamsd& params, const TrainConfig& config,
                              LossBreakdown* loss) {
  ProjectionParamsd grad = params.zeros_like();
  const auto l = evaluate(ctx, params, config, &grad);
  if (loss != nullptr) *loss = l;
  return grad;
}

ProjectionParamsd init_params(int d_2d, int d_3d, double noise, std::uint64_t seed, bool shared) {
  auto params = ProjectionParamsd::identity(d_2d, d_3d, shared);
  std::uint64_t state = seed ^ 0x5deece66dull;
  auto next = [&state] {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return (static_cast<double>(z >> 11) + 0.5) * 0x1.0p-53;
  };
  params.for_each([&](Matrixd& w) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double g = std::sqrt(-2.0 * std::log(next())) * std::cos(2.0 * 3.14159265358979323846 * next());
      w.data()[i] += noise * g;
    }
  });
  return params;
}

nlohmann::json to_json(const LogEntry& e) {
  return {{"step", e.step},     {"sample", e.sample_id}, {"l_view", e.l_view}, {"l_diff", e.l_diff},
          {"l_sspa", e.l_sspa}, {"l_mvga", e.l_mvga},    {"total", e.total}};
}

TrainState train(const std::vector<SampleContext>& samples, const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (samples.empty()) throw DataError("training needs at least one normal sample");
  const auto& f0 = samples.front().features;
  TrainState state;
  state.params = init_params(f0.dim(Modality::k2D), f0.dim(Modality::k3D), config.init_noise, config.seed,
                             config.shared_params);
  const Eigen::Index n = state.params.num_entries();
  state.first_moment = Vectord::Zero(n);
  state.second_moment = Vectord::Zero(n);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  for (int step = 1; step <= config.steps; ++step) {
    const auto& ctx = samples[static_cast<std::size_t>((step - 1) % static_cast<int>(samples.size()))];
    LossBreakdown loss;
    const Vectord g = grad_params(ctx, state.params, config, &loss).flatten();
    if (!std::isfinite(loss.total) || !g.allFinite()) {
      throw NumericError("training diverged at step " + std::to_string(step) + " (non-finite loss or gradient)");
    }
    LogEntry entry{step, ctx.sample_id, loss.sspa.l_view, loss.sspa.l_diff, loss.sspa.l_sspa, loss.mvga, loss.total};
    if (log != nullptr) *log << to_json(entry).dump() << '\n';
    state.history.push_back(std::move(entry));

    Vectord w = state.params.flatten();
    if (config.optimizer == OptimizerKind::kAdam) {
      state.first_moment = kBeta1 * state.first_moment + (1.0 - kBeta1) * g;
      state.second_moment = kBeta2 * state.second_moment + (1.0 - kBeta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(kBeta1, step);
      const double c2 = 1.0 - std::pow(kBeta2, step);
      w.array() -= config.lr * (state.first_moment.array() / c1) /
                   ((state.second_moment.array() / c2).sqrt() + kEps);
    } else {
      w -= config.lr * g;
    }
    state.params.unflatten(w);
    state.step = step;
  }
  return state;
}

}  // namespace sganet
