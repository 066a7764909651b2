// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "sganet/features.hpp"
#include "sganet/mvga.hpp"
#include "sganet/scfrm.hpp"
#include "sganet/sspa.hpp"

namespace sganet {

using ProjectionParamsd = scfrm::ProjectionParams<double>;

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  double alpha = 0.8;
  int k = 8;
  int n = 2;
  double lambda_sspa = 1.0;
  double lambda_mvga = 2.0;
  int steps = 200;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;

  bool use_view = true;
  bool use_diff = true;
  bool cyclic = true;
  bool residual = false;
  bool shared_params = false;
  double depth_tol = 0.02;
  double init_noise = 0.01;

  void validate() const;
  // True when the SSPA term can contribute, which requires d_2d == d_3d.
  bool sspa_active() const { return lambda_sspa > 0.0 && (use_view || use_diff); }

  scfrm::SelectionOptions selection() const { return {alpha, k, cyclic}; }
  sspa::SspaOptions sspa_options() const { return {use_view, use_diff, true}; }
  scfrm::RefineOptions refine_options() const { return {residual}; }
  mvga::CorrespondenceOptions correspondence_options() const { return {n, depth_tol, cyclic}; }
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Rejects SSPA with unequal modality dims.
void validate_dims(const TrainConfig& c, int d_2d, int d_3d);

// Training-invariant per-sample inputs: raw features, frozen candidates and correspondences.
struct SampleContext {
  std::string sample_id;
  SampleFeatures<double> features;
  scfrm::CandidateSet candidates;
  mvga::CorrespondenceSet correspondences;
};

SampleContext prepare_sample(const ViewSet& vs, const ExtractorSpec& extractor, const TrainConfig& config,
                             Warnings* warnings = nullptr);

struct LossBreakdown {
  double total = 0.0;
  sspa::AlignmentLossReport<double> sspa;
  double mvga = 0.0;
};

// lambda_sspa * L_sspa + lambda_mvga * L_mvga on refined features.
LossBreakdown total_loss(const SampleContext& ctx, const ProjectionParamsd& params, const TrainConfig& config);

// Exact dL/dW for every projection matrix, with candidates and correspondences held fixed.
ProjectionParamsd grad_params(const SampleContext& ctx, const ProjectionParamsd& params, const TrainConfig& config,
                              LossBreakdown* loss = nullptr);

// Identity plus N(0, noise^2) entries, seeded.
ProjectionParamsd init_params(int d_2d, int d_3d, double noise, std::uint64_t seed, bool shared = false);

struct LogEntry {
  int step = 0;
  std::string sample_id;
  double l_view = 0, l_diff = 0, l_sspa = 0, l_mvga = 0, total = 0;
};

nlohmann::json to_json(const LogEntry& e);

struct TrainState {
  ProjectionParamsd params;
  int step = 0;
  Vectord first_moment;
  Vectord second_moment;
  std::vector<LogEntry> history;
};

// Runs config.steps updates cycling over `samples` in order. Writes one JSON
// line per step to `log` when given. Throws NumericError on non-finite loss.
TrainState train(const std::vector<SampleContext>& samples, const TrainConfig& config, std::ostream* log = nullptr);

// params.json manifest plus one FT32 file per matrix (w{q,k,v}_{2d,3d}.ft32).
void save_params(const std::filesystem::path& dir, const ProjectionParamsd& params);
ProjectionParamsd load_params(const std::filesystem::path& dir);

}  // namespace sganet
