// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "sganet/data_model.hpp"

namespace sganet {

enum class ExtractorKind { kToy, kPrecomputed };

struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::kToy;
  int d_2d = 32;
  int d_3d = 32;
  int patch_px = 8;
  std::uint64_t seed = 17;
  // Precomputed only: directory holding <sample_id>/view_<kk>_<2d|3d>.ft32 and features_meta.json.
  std::filesystem::path root;

  void validate() const;
  int dim(Modality m) const { return m == Modality::k2D ? d_2d : d_3d; }
};

// Metadata written next to precomputed features.
struct FeaturesMeta {
  int d_2d = 0;
  int d_3d = 0;
  int rows = 0;
  int cols = 0;
  std::string backbone;
  std::string layer;
};

FeaturesMeta read_features_meta(const std::filesystem::path& root);
void write_features_meta(const std::filesystem::path& root, const FeaturesMeta& meta);

std::string precomputed_file_name(int view_index, Modality m);

// Patch grid the extractor produces for a viewset.
PatchGrid extractor_grid(const ExtractorSpec& spec, const ViewSet& vs);

// Depth min-max normalized over valid pixels: valid -> 0.1 + 0.9 * (d - min) / (max - min), invalid -> 0.
Matrixf normalize_depth(const Matrixf& depth);

// Deterministic random-projection featurizer over raw patch content plus
// mean / std / gradient-energy statistics, squashed by tanh.
Matrixd toy_features(const ExtractorSpec& spec, std::span<const Matrixf> channels, const PatchGrid& grid, Modality m);

FeatureMap<double> extract(const ExtractorSpec& spec, const ViewObservation& obs, Modality m,
                           const std::string& sample_id = {}, Warnings* warnings = nullptr);

SampleFeatures<double> extract_sample(const ExtractorSpec& spec, const ViewSet& vs, Warnings* warnings = nullptr);

nlohmann::json to_json(const ExtractorSpec& spec);
ExtractorSpec extractor_from_json(const nlohmann::json& j);

}  // namespace sganet
