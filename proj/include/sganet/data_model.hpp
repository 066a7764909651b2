// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sganet/camera.hpp"
#include "sganet/common.hpp"
#include "sganet/tensor.hpp"

namespace sganet {

// Fixed square-patch tokenization of an image. Remainder strips on the
// right/bottom edges are not covered.
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int patch_px = 1;

  int num_patches() const { return rows * cols; }

  static PatchGrid for_image(int height, int width, int patch_px);

  bool operator==(const PatchGrid&) const = default;
};

// Patch index containing continuous pixel (u, v), or nullopt outside the grid.
std::optional<int> patch_of_pixel(const PatchGrid& grid, double u, double v);

// Continuous pixel coordinate of the center of patch p, as (u, v).
Eigen::Vector2d patch_center(const PatchGrid& grid, int p);

// Integer pixel sampled as the representative of patch p, as (x, y).
Eigen::Vector2i patch_center_pixel(const PatchGrid& grid, int p);

enum class Label { kNormal, kAnomalous, kUnknown };

std::string label_name(Label label);
Label parse_label(const std::string& name);

struct ViewObservation {
  int view_index = 1;
  Tensor image;  // [H, W] or [H, W, C], intensities in [0, 1]
  Matrixf depth;  // camera-frame z, 0 = no return
  CameraModel camera;
  std::optional<Matrixf> gt_mask;

  int height() const { return static_cast<int>(depth.rows()); }
  int width() const { return static_cast<int>(depth.cols()); }
  int channels() const { return image.ndim() == 3 ? static_cast<int>(image.shape[2]) : 1; }
  float pixel(int y, int x, int c = 0) const {
    return image.data[(static_cast<std::size_t>(y) * width() + x) * channels() + c];
  }

  void validate() const;
};

struct ViewSet {
  std::string sample_id;
  std::string category;
  Label label = Label::kUnknown;
  std::vector<ViewObservation> views;

  int num_views() const { return static_cast<int>(views.size()); }
  int height() const { return views.empty() ? 0 : views.front().height(); }
  int width() const { return views.empty() ? 0 : views.front().width(); }

  void validate() const;
};

// Per-view, per-modality patch features of one sample: views[i][modality] is P x d_m.
template <typename Scalar>
struct SampleFeatures {
  PatchGrid grid;
  std::vector<std::array<Matrix<Scalar>, 2>> views;

  int num_views() const { return static_cast<int>(views.size()); }
  int num_patches() const { return grid.num_patches(); }
  int dim(Modality m) const { return views.empty() ? 0 : static_cast<int>(views.front()[index_of(m)].cols()); }

  Matrix<Scalar>& at(int view, Modality m) { return views[static_cast<std::size_t>(view)][index_of(m)]; }
  const Matrix<Scalar>& at(int view, Modality m) const { return views[static_cast<std::size_t>(view)][index_of(m)]; }

  // Same layout, all zeros.
  SampleFeatures zeros_like() const {
    SampleFeatures out{grid, views};
    for (auto& v : out.views)
      for (auto& f : v) f.setZero();
    return out;
  }

  template <typename Other>
  SampleFeatures<Other> cast() const {
    SampleFeatures<Other> out;
    out.grid = grid;
    out.views.resize(views.size());
    for (std::size_t i = 0; i < views.size(); ++i)
      for (int m = 0; m < 2; ++m) out.views[i][m] = views[i][m].template cast<Other>();
    return out;
  }
};

// A single (view, modality) feature map.
template <typename Scalar>
struct FeatureMap {
  int view_index = 1;
  Modality modality = Modality::k2D;
  PatchGrid grid;
  Matrix<Scalar> features;
  bool refined = false;
};

// Dataset layout: <root>/<sample_id>/meta.json and view_<kk>/{image,depth,mask}.ft32 + camera.json.
std::string view_dir_name(int view_index);

ViewSet load_viewset(const std::filesystem::path& dir);
void save_viewset(const std::filesystem::path& dir, const ViewSet& vs);

// Sample directories (those holding meta.json) under `split_dir`, sorted by name.
std::vector<std::filesystem::path> list_samples(const std::filesystem::path& split_dir);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

Matrixf to_image_matrix(const Tensor& t);
Tensor from_image_matrix(const Matrixf& m);

}  // namespace sganet
