// SPDX-License-Identifier: Apache-2.0
#include "sganet/features.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace sganet {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded N(0, 1) matrix via Box-Muller over a splitmix stream.
Matrixd gaussian_matrix(int rows, int cols, std::uint64_t seed) {
  Matrixd out(rows, cols);
  std::uint64_t state = mix(seed);
  auto uniform = [&state] {
    state = mix(state);
    return (static_cast<double>(state >> 11) + 0.5) * 0x1.0p-53;
  };
  for (Eigen::Index i = 0; i < out.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    out.data()[i] = r * std::cos(theta);
    if (i + 1 < out.size()) out.data()[i + 1] = r * std::sin(theta);
  }
  return out;
}

constexpr double kProjectionGain = 2.0;

}  // namespace

void ExtractorSpec::validate() const {
  if (d_2d < 2 || d_3d < 2) throw UsageError("feature dims must be >= 2");
  if (patch_px < 2) throw UsageError("patch_px must be >= 2");
  if (kind == ExtractorKind::kPrecomputed && root.empty()) throw UsageError("precomputed extractor needs a root");
}

std::string precomputed_file_name(int view_index, Modality m) {
  return view_dir_name(view_index) + "_" + std::string(modality_name(m)) + ".ft32";
}

FeaturesMeta read_features_meta(const fs::path& root) {
  const auto j = read_json(root / "features_meta.json");
  FeaturesMeta meta;
  try {
    meta.d_2d = j.at("d_2d").get<int>();
    meta.d_3d = j.at("d_3d").get<int>();
    meta.rows = j.at("grid").at("rows").get<int>();
    meta.cols = j.at("grid").at("cols").get<int>();
    meta.backbone = j.value("backbone", std::string{});
    if (j.contains("layer")) meta.layer = j["layer"].is_string() ? j["layer"].get<std::string>() : j["layer"].dump();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("features_meta.json: ") + e.what());
  }
  return meta;
}

void write_features_meta(const fs::path& root, const FeaturesMeta& meta) {
  nlohmann::json j;
  j["d_2d"] = meta.d_2d;
  j["d_3d"] = meta.d_3d;
  j["grid"] = {{"rows", meta.rows}, {"cols", meta.cols}};
  j["backbone"] = meta.backbone;
  if (!meta.layer.empty()) {
    // Numeric or structured layer ids are kept as JSON; anything else is a name.
    auto parsed = nlohmann::json::parse(meta.layer, nullptr, false);
    j["layer"] = parsed.is_discarded() || parsed.is_string() ? nlohmann::json(meta.layer) : parsed;
  }
  write_json(root / "features_meta.json", j);
}

PatchGrid extractor_grid(const ExtractorSpec& spec, const ViewSet& vs) {
  if (spec.kind == ExtractorKind::kToy) {
    const auto grid = PatchGrid::for_image(vs.height(), vs.width(), spec.patch_px);
    if (grid.rows < 2 || grid.cols < 2) throw DataError("image too small for a 2x2 patch grid");
    return grid;
  }
  const auto meta = read_features_meta(spec.root);
  if (meta.rows < 2 || meta.cols < 2) throw DataError("precomputed grid must be at least 2x2");
  // Map the feature grid back onto image pixels for geometric use.
  const int px = std::min(vs.height() / meta.rows, vs.width() / meta.cols);
  if (px < 1) throw DataError("precomputed grid finer than the image");
  return PatchGrid{meta.rows, meta.cols, px};
}

Matrixf normalize_depth(const Matrixf& depth) {
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (Eigen::Index i = 0; i < depth.size(); ++i) {
    const float d = depth.data()[i];
    if (d > 0.0f) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  Matrixf out = Matrixf::Zero(depth.rows(), depth.cols());
  if (lo > hi) return out;
  const float range = hi > lo ? hi - lo : 1.0f;
  for (Eigen::Index i = 0; i < depth.size(); ++i) {
    const float d = depth.data()[i];
    if (d > 0.0f) out.data()[i] = 0.1f + 0.9f * (d - lo) / range;
  }
  return out;
}

Matrixd toy_features(const ExtractorSpec& spec, std::span<const Matrixf> channels, const PatchGrid& grid,
                     Modality m) {
  const int px = grid.patch_px;
  const int n_chan = static_cast<int>(channels.size());
  const int n_pix = px * px;
  const int n_in = n_chan * (n_pix + 3);
  const int d_out = spec.dim(m);
  const Matrixd proj = gaussian_matrix(d_out, n_in, spec.seed * 2 + static_cast<std::uint64_t>(index_of(m))) *
                       (kProjectionGain / std::sqrt(static_cast<double>(n_in)));
  Matrixd inputs(grid.num_patches(), n_in);
  for (int p = 0; p < grid.num_patches(); ++p) {
    const int y0 = (p / grid.cols) * px, x0 = (p % grid.cols) * px;
    for (int c = 0; c < n_chan; ++c) {
      const auto block = channels[static_cast<std::size_t>(c)].block(y0, x0, px, px).cast<double>();
      const double mean = block.mean();
      const double var = (block.array() - mean).square().mean();
      const double gx = (block.rightCols(px - 1) - block.leftCols(px - 1)).squaredNorm();
      const double gy = (block.bottomRows(px - 1) - block.topRows(px - 1)).squaredNorm();
      const double grad_energy = (gx + gy) / (2.0 * px * (px - 1));
      double* row = inputs.row(p).data() + c * (n_pix + 3);
      for (int yy = 0; yy < px; ++yy)
        for (int xx = 0; xx < px; ++xx) row[yy * px + xx] = block(yy, xx) - mean;
      row[n_pix] = mean;
      row[n_pix + 1] = std::sqrt(var);
      row[n_pix + 2] = std::sqrt(grad_energy);
    }
  }
  return (inputs * proj.transpose()).array().tanh().matrix();
}

FeatureMap<double> extract(const ExtractorSpec& spec, const ViewObservation& obs, Modality m,
                           const std::string& sample_id, Warnings* warnings) {
  spec.validate();
  FeatureMap<double> out;
  out.view_index = obs.view_index;
  out.modality = m;
  if (spec.kind == ExtractorKind::kToy) {
    out.grid = PatchGrid::for_image(obs.height(), obs.width(), spec.patch_px);
    if (out.grid.rows < 2 || out.grid.cols < 2) throw DataError("image too small for a 2x2 patch grid");
    std::vector<Matrixf> channels;
    if (m == Modality::k2D) {
      for (int c = 0; c < obs.channels(); ++c) {
        Matrixf ch(obs.height(), obs.width());
        for (int y = 0; y < obs.height(); ++y)
          for (int x = 0; x < obs.width(); ++x) ch(y, x) = obs.pixel(y, x, c);
        channels.push_back(std::move(ch));
      }
    } else {
      channels.push_back(normalize_depth(obs.depth));
    }
    out.features = toy_features(spec, channels, out.grid, m);
    return out;
  }

  const auto meta = read_features_meta(spec.root);
  const int expected_d = m == Modality::k2D ? meta.d_2d : meta.d_3d;
  if (expected_d != spec.dim(m)) {
    warn(warnings, "precomputed " + std::string(modality_name(m)) + " dim " + std::to_string(expected_d) +
                       " overrides configured " + std::to_string(spec.dim(m)));
  }
  const fs::path file = spec.root / sample_id / precomputed_file_name(obs.view_index, m);
  if (!fs::exists(file)) throw DataError("missing precomputed features " + file.string());
  const Tensor t = read_tensor(file);
  const auto p = static_cast<std::uint64_t>(meta.rows) * static_cast<std::uint64_t>(meta.cols);
  if (t.ndim() != 2 || t.shape[0] != p || t.shape[1] != static_cast<std::uint64_t>(expected_d)) {
    throw DataError(file.string() + ": expected shape [" + std::to_string(p) + ", " + std::to_string(expected_d) +
                    "]");
  }
  const int px = std::min(obs.height() / meta.rows, obs.width() / meta.cols);
  out.grid = PatchGrid{meta.rows, meta.cols, std::max(px, 1)};
  out.features = to_matrix<double>(t);
  return out;
}

SampleFeatures<double> extract_sample(const ExtractorSpec& spec, const ViewSet& vs, Warnings* warnings) {
  SampleFeatures<double> out;
  out.views.resize(static_cast<std::size_t>(vs.num_views()));
  for (int i = 0; i < vs.num_views(); ++i) {
    for (auto m : kModalities) {
      auto fm = extract(spec, vs.views[static_cast<std::size_t>(i)], m, vs.sample_id, warnings);
      out.grid = fm.grid;
      out.at(i, m) = std::move(fm.features);
    }
  }
  return out;
}

nlohmann::json to_json(const ExtractorSpec& spec) {
  nlohmann::json j{{"kind", spec.kind == ExtractorKind::kToy ? "toy" : "precomputed"},
                   {"d_2d", spec.d_2d},
                   {"d_3d", spec.d_3d},
                   {"patch_px", spec.patch_px},
                   {"seed", spec.seed}};
  if (!spec.root.empty()) j["root"] = spec.root.string();
  return j;
}

ExtractorSpec extractor_from_json(const nlohmann::json& j) {
  ExtractorSpec s;
  const auto kind = j.value("kind", std::string("toy"));
  if (kind == "toy") {
    s.kind = ExtractorKind::kToy;
  } else if (kind == "precomputed") {
    s.kind = ExtractorKind::kPrecomputed;
  } else {
    throw UsageError("unknown extractor kind '" + kind + "'");
  }
  s.d_2d = j.value("d_2d", s.d_2d);
  s.d_3d = j.value("d_3d", s.d_3d);
  s.patch_px = j.value("patch_px", s.patch_px);
  s.seed = j.value("seed", s.seed);
  if (j.contains("root")) s.root = j["root"].get<std::string>();
  return s;
}

}  // namespace sganet
