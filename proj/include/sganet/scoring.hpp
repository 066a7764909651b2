// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sganet/training.hpp"

namespace sganet::scoring {

// Row-wise [f2d | f3d].
template <typename Scalar>
Matrix<Scalar> fuse(const Matrix<Scalar>& f2d, const Matrix<Scalar>& f3d) {
  if (f2d.rows() != f3d.rows()) throw UsageError("fuse needs equal patch counts");
  Matrix<Scalar> out(f2d.rows(), f2d.cols() + f3d.cols());
  out << f2d, f3d;
  return out;
}

// Which modalities enter the bank. kFused is the full method; the single-modality
// variants exist for comparison runs.
enum class BankModalities { kFused, k2DOnly, k3DOnly };

std::string bank_modalities_name(BankModalities b);

Matrixd bank_rows(const SampleFeatures<double>& refined, int view, BankModalities which);

struct Provenance {
  std::string sample_id;
  int view = 1;   // 1-based
  int patch = 0;  // 0-based
};

struct MemoryBank {
  Matrixd entries;
  std::vector<Provenance> provenance;
  std::vector<int> coreset_indices;  // empty when no subsampling happened
  BankModalities modalities = BankModalities::kFused;

  Eigen::Index size() const { return entries.rows(); }
};

// Greedy farthest-point selection of `keep` rows. Starts from the row farthest
// from the mean; ties go to the lower index.
std::vector<int> farthest_point_coreset(const Matrixd& points, std::size_t keep);

struct BankSource {
  std::string sample_id;
  SampleFeatures<double> refined;
};

MemoryBank build_bank(const std::vector<BankSource>& sources, double coreset_ratio = 1.0,
                      BankModalities which = BankModalities::kFused);

// Euclidean distance from every query row to its nearest bank row.
Vectord nearest_distances(const Matrixd& queries, const Matrixd& bank);

struct MapOptions {
  double sigma = 4.0;
  // Gaussian support truncated at truncate * sigma.
  double truncate = 4.0;
};

// Bilinear upsampling of the patch-score grid to H x W (grid cells sampled at
// their centers, clamped at borders) followed by Gaussian smoothing.
Matrixf render_anomaly_map(const Vectord& patch_scores, const PatchGrid& grid, int height, int width,
                           const MapOptions& opt = {});

Matrixf gaussian_blur(const Matrixf& img, double sigma, double truncate = 4.0);

struct ViewResult {
  Vectord patch_scores;
  Matrixf map;
  double score = 0.0;
};

struct AnomalyResult {
  std::string sample_id;
  Label label = Label::kUnknown;
  std::vector<ViewResult> views;
  double score = 0.0;
};

AnomalyResult score_refined(const SampleFeatures<double>& refined, const MemoryBank& bank, int height, int width,
                            const MapOptions& opt = {});

// Extract -> select -> refine, the same path used for training samples.
SampleFeatures<double> refine_sample(const ViewSet& vs, const ProjectionParamsd& params,
                                     const ExtractorSpec& extractor, const TrainConfig& config,
                                     Warnings* warnings = nullptr);

MemoryBank build_bank(const std::vector<ViewSet>& train, const ProjectionParamsd& params,
                      const ExtractorSpec& extractor, const TrainConfig& config, double coreset_ratio = 1.0,
                      BankModalities which = BankModalities::kFused);

AnomalyResult score_sample(const ViewSet& test, const MemoryBank& bank, const ProjectionParamsd& params,
                           const ExtractorSpec& extractor, const TrainConfig& config, const MapOptions& opt = {});

void save_bank(const std::filesystem::path& dir, const MemoryBank& bank);
MemoryBank load_bank(const std::filesystem::path& dir);

// Writes view_<kk>.ft32 maps per sample plus an 8-bit PGM when `pgm` is set.
void save_maps(const std::filesystem::path& dir, const AnomalyResult& result, bool pgm = false);
void write_pgm(const std::filesystem::path& path, const Matrixf& map, float lo, float hi);

}  // namespace sganet::scoring
