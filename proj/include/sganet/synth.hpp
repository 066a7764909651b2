// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <Eigen/Core>
#include <json.hpp>

#include "sganet/data_model.hpp"

namespace sganet::synth {

enum class ShapeKind { kSphere, kCylinder, kBox };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  // sphere: (radius, -, -); cylinder: (radius, half height, -); box: half extents.
  Eigen::Vector3d size{1.0, 1.0, 1.0};

  double bounding_radius() const;
};

struct TextureSpec {
  std::uint64_t seed = 7;
  double frequency = 3.0;
  double contrast = 0.3;
  // Per-sample low-amplitude noise layer so that samples are not identical.
  double jitter = 0.02;
};

struct RingSpec {
  int num_views = 12;
  double radius = 3.0;
  double height = 0.0;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  double fov_deg = 40.0;
};

struct SceneSpec {
  ShapeSpec shape;
  TextureSpec texture;
  RingSpec ring;
  int height = 128;
  int width = 128;
  std::uint64_t seed = 1;

  void validate() const;
  CameraModel camera(int view_index) const;
};

enum class DefectKind { kTextureBlotch, kGeometricDent, kGeometricBump };

// Defect centered at the surface point hit by the horizontal ray leaving the
// shape axis at `azimuth` (radians) and world height `z`.
struct DefectSpec {
  DefectKind kind = DefectKind::kTextureBlotch;
  double azimuth = 0.0;
  double z = 0.0;
  double radius = 0.15;
  double magnitude = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

// First-hit result of a ray against the scene.
struct Hit {
  double t = 0.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  bool on_defect = false;
};

// Ray cast against the base shape with an optional geometric defect (texture
// defects do not change geometry). `dir` must be unit length.
std::optional<Hit> cast_ray(const SceneSpec& scene, const std::optional<DefectSpec>& defect,
                            const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

// Surface point and outward normal of the base shape at (azimuth, z).
std::pair<Eigen::Vector3d, Eigen::Vector3d> surface_point(const ShapeSpec& shape, double azimuth, double z);

// Renders one view. `texture_jitter_seed` selects the per-sample noise layer.
ViewObservation render_view(const SceneSpec& scene, const std::optional<DefectSpec>& defect, int view_index,
                            std::uint64_t texture_jitter_seed = 0);

ViewSet render_viewset(const SceneSpec& scene, const std::optional<DefectSpec>& defect, std::string sample_id,
                       Label label, std::uint64_t texture_jitter_seed);

struct DatasetOptions {
  int n_normal = 1;
  int n_anomalous = 4;
  // Held-out normal test samples; negative means "same as n_anomalous".
  int n_test_normal = -1;
  double defect_radius = 0.18;
  double blotch_magnitude = 0.35;
  double geometric_magnitude = 0.12;
  std::string category = "synthetic";
  std::uint64_t seed = 1;
};

// Writes <out>/train, <out>/test and <out>/dataset.json.
void generate_dataset(const SceneSpec& scene, const DatasetOptions& options, const std::filesystem::path& out_dir);

// Chooses a defect whose region is visible in at least one view of `scene`.
DefectSpec place_defect(const SceneSpec& scene, DefectKind kind, double radius, double magnitude,
                        std::uint64_t seed);

std::string shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);
std::string defect_kind_name(DefectKind kind);

nlohmann::json to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DefectSpec& defect);
DefectSpec defect_from_json(const nlohmann::json& j);

}  // namespace sganet::synth
