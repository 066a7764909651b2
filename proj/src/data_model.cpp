// SPDX-License-Identifier: Apache-2.0
#include "sganet/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace sganet {

namespace fs = std::filesystem;

PatchGrid PatchGrid::for_image(int height, int width, int patch_px) {
  if (patch_px < 1) throw UsageError("patch_px must be >= 1");
  return PatchGrid{height / patch_px, width / patch_px, patch_px};
}

std::optional<int> patch_of_pixel(const PatchGrid& grid, double u, double v) {
  if (!(u >= 0.0) || !(v >= 0.0)) return std::nullopt;
  const auto col = static_cast<long>(std::floor(u / grid.patch_px));
  const auto row = static_cast<long>(std::floor(v / grid.patch_px));
  if (col >= grid.cols || row >= grid.rows) return std::nullopt;
  return static_cast<int>(row * grid.cols + col);
}

Eigen::Vector2d patch_center(const PatchGrid& grid, int p) {
  const int row = p / grid.cols;
  const int col = p % grid.cols;
  return {(col + 0.5) * grid.patch_px, (row + 0.5) * grid.patch_px};
}

Eigen::Vector2i patch_center_pixel(const PatchGrid& grid, int p) {
  const int row = p / grid.cols;
  const int col = p % grid.cols;
  return {col * grid.patch_px + grid.patch_px / 2, row * grid.patch_px + grid.patch_px / 2};
}

std::string label_name(Label label) {
  switch (label) {
    case Label::kNormal: return "normal";
    case Label::kAnomalous: return "anomalous";
    default: return "unknown";
  }
}

Label parse_label(const std::string& name) {
  if (name == "normal") return Label::kNormal;
  if (name == "anomalous") return Label::kAnomalous;
  if (name == "unknown") return Label::kUnknown;
  throw DataError("unknown label '" + name + "'");
}

void ViewObservation::validate() const {
  if (image.ndim() != 2 && image.ndim() != 3) throw DataError("image must be HxW or HxWxC");
  if (static_cast<Eigen::Index>(image.shape[0]) != depth.rows() ||
      static_cast<Eigen::Index>(image.shape[1]) != depth.cols()) {
    throw DataError("view " + std::to_string(view_index) + ": image and depth dimensions differ");
  }
  if ((depth.array() < 0.0f).any()) throw DataError("negative depth values");
  if (gt_mask) {
    if (gt_mask->rows() != depth.rows() || gt_mask->cols() != depth.cols()) {
      throw DataError("view " + std::to_string(view_index) + ": mask dimensions differ");
    }
    if (((gt_mask->array() != 0.0f) && (gt_mask->array() != 1.0f)).any()) {
      throw DataError("mask values must be 0 or 1");
    }
  }
  camera.validate();
}

void ViewSet::validate() const {
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& v = views[k];
    if (v.view_index != static_cast<int>(k) + 1) throw DataError("view indices must be 1..I consecutive");
    v.validate();
    if (v.height() != height() || v.width() != width() || v.channels() != views.front().channels()) {
      throw DataError("all views must share H, W and channel count");
    }
  }
}

std::string view_dir_name(int view_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d", view_index);
  return buf;
}

Matrixf to_image_matrix(const Tensor& t) {
  if (t.ndim() != 2) throw DataError("expected an HxW tensor");
  return to_matrix<float>(t);
}

Tensor from_image_matrix(const Matrixf& m) { return to_tensor(m); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ViewSet load_viewset(const fs::path& dir) {
  const auto meta = read_json(dir / "meta.json");
  ViewSet vs;
  int num_views = 0;
  try {
    vs.sample_id = meta.at("sample_id").get<std::string>();
    vs.label = parse_label(meta.at("label").get<std::string>());
    num_views = meta.at("I").get<int>();
    vs.category = meta.value("category", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "meta.json").string() + ": " + e.what());
  }
  if (num_views < 1) throw DataError("meta.json: I must be >= 1");
  for (int k = 1; k <= num_views; ++k) {
    const fs::path vdir = dir / view_dir_name(k);
    if (!fs::is_directory(vdir)) throw DataError("missing view directory " + vdir.string());
    ViewObservation obs;
    obs.view_index = k;
    obs.image = read_tensor(vdir / "image.ft32");
    obs.depth = to_image_matrix(read_tensor(vdir / "depth.ft32"));
    obs.camera = camera_from_json(read_json(vdir / "camera.json"));
    if (fs::exists(vdir / "mask.ft32")) obs.gt_mask = to_image_matrix(read_tensor(vdir / "mask.ft32"));
    vs.views.push_back(std::move(obs));
  }
  vs.validate();
  return vs;
}

void save_viewset(const fs::path& dir, const ViewSet& vs) {
  vs.validate();
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["sample_id"] = vs.sample_id;
  meta["label"] = label_name(vs.label);
  meta["I"] = vs.num_views();
  if (!vs.category.empty()) meta["category"] = vs.category;
  write_json(dir / "meta.json", meta);
  for (const auto& v : vs.views) {
    const fs::path vdir = dir / view_dir_name(v.view_index);
    fs::create_directories(vdir);
    write_tensor(vdir / "image.ft32", v.image);
    write_tensor(vdir / "depth.ft32", from_image_matrix(v.depth));
    write_json(vdir / "camera.json", to_json(v.camera));
    if (v.gt_mask) write_tensor(vdir / "mask.ft32", from_image_matrix(*v.gt_mask));
  }
}

std::vector<fs::path> list_samples(const fs::path& split_dir) {
  if (!fs::is_directory(split_dir)) throw DataError("not a directory: " + split_dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sganet
