// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sganet/data_model.hpp"

namespace sganet::metrics {

// Rank AUROC with ties counted as one half. labels: nonzero = positive.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Scored elements grouped into ground-truth regions. region[e] < 0 marks a
// normal element; otherwise it is the region id in [0, num_regions).
struct RegionSet {
  std::vector<double> scores;
  std::vector<int> region;
  int num_regions = 0;

  // Appends `other`, offsetting its region ids.
  void append(const RegionSet& other);
};

struct ProCurve {
  // Point e corresponds to predicting positive for score >= thresholds[e].
  // The first point (threshold +inf) is always (0, 0).
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> pro;
};

ProCurve pro_curve(const RegionSet& set);

// Trapezoidal area over fpr in [0, limit], divided by limit. The curve is
// linearly interpolated at the cap.
double area_to_limit(const std::vector<double>& fpr, const std::vector<double>& tpr, double limit);

double aupro(const RegionSet& set, double limit, ProCurve* curve = nullptr);

// 4-connected components of a binary mask (> 0.5 counts as set). Returns
// per-pixel ids, -1 for background, and the number of components.
std::vector<int> label_components(const Matrixf& mask, int* count);

// Region set for a collection of score maps and masks (empty mask = all normal).
RegionSet pixel_regions(const std::vector<Matrixf>& maps, const std::vector<Matrixf>& masks);

double aupro(const std::vector<Matrixf>& maps, const std::vector<Matrixf>& masks, double limit,
             ProCurve* curve = nullptr);

struct VoxelCloud {
  double voxel_size = 0.0;
  std::vector<std::array<long, 3>> voxels;
  std::vector<double> scores;     // mean over contributing pixels
  std::vector<int> gt;            // max over contributing pixels
  std::vector<int> contributors;  // pixel count per voxel
  std::size_t num_points = 0;     // before fusion
};

// Unprojects every valid-depth pixel of every view with its map score and mask
// bit, then fuses points falling in the same voxel (lexicographic voxel order).
VoxelCloud project_scores_to_points(const ViewSet& vs, const std::vector<Matrixf>& maps, double voxel_size);

// 6-connected components over the voxels with gt set.
RegionSet voxel_regions(const VoxelCloud& cloud);

struct EvalOptions {
  std::vector<double> aupro_limits{0.3, 0.01};
  double voxel_size = 0.05;
  bool point_metrics = true;
};

struct EvalInput {
  std::string sample_id;
  std::string category;
  Label label = Label::kUnknown;
  double score = 0.0;
  std::vector<Matrixf> maps;   // per view
  std::vector<Matrixf> masks;  // per view, empty when unavailable
  const ViewSet* viewset = nullptr;  // needed for point metrics
};

struct MetricBlock {
  double i_auroc = 0.0;
  double p_auroc = 0.0;
  std::map<double, double> aupro;
  double pv_auroc = 0.0;
  std::map<double, double> pv_aupro;
  std::size_t num_samples = 0, num_pixels = 0, num_regions = 0;
  std::size_t num_points = 0, num_voxels = 0, num_voxel_regions = 0;
};

struct EvalReport {
  MetricBlock overall;
  std::map<std::string, MetricBlock> per_category;
  EvalOptions options;
  std::map<double, ProCurve> curves;  // overall pixel PRO curves per limit
};

EvalReport evaluate(const std::vector<EvalInput>& inputs, const EvalOptions& opt = {});

nlohmann::json to_json(const MetricBlock& b, const EvalOptions& opt);
nlohmann::json to_json(const EvalReport& r);
// CSV rows: limit,threshold,fpr,pro
std::string curves_csv(const EvalReport& r);

}  // namespace sganet::metrics
