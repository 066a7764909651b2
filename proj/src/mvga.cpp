// SPDX-License-Identifier: Apache-2.0
#include "sganet/mvga.hpp"

#include <algorithm>
#include <cmath>

namespace sganet::mvga {

std::vector<int> neighbor_set(int i, int num_views, int n, bool cyclic) {
  if (i < 1 || i > num_views) throw UsageError("view index out of range");
  if (n < 1) throw UsageError("N must be >= 1");
  std::vector<int> out;
  auto push = [&](int j) {
    if (cyclic) {
      j = ((j - 1) % num_views + num_views) % num_views + 1;
    } else if (j < 1 || j > num_views) {
      return;
    }
    if (j != i && std::find(out.begin(), out.end(), j) == out.end()) out.push_back(j);
  };
  for (int d = n; d >= 1; --d) push(i - d);
  for (int d = 1; d <= n; ++d) push(i + d);
  return out;
}

RejectionCounts& RejectionCounts::operator+=(const RejectionCounts& o) {
  out_of_bounds += o.out_of_bounds;
  occluded += o.occluded;
  no_depth += o.no_depth;
  depth_mismatch += o.depth_mismatch;
  return *this;
}

const ViewPairCorrespondence* CorrespondenceSet::find(int i, int j) const {
  for (const auto& vp : pairs)
    if (vp.i == i && vp.j == j) return &vp;
  return nullptr;
}

RejectionCounts CorrespondenceSet::totals() const {
  RejectionCounts t;
  for (const auto& vp : pairs) t += vp.rejected;
  return t;
}

std::size_t CorrespondenceSet::total_pairs() const {
  std::size_t n = 0;
  for (const auto& vp : pairs) n += vp.pairs.size();
  return n;
}

PatchMatch match_patch(const ViewObservation& src, const ViewObservation& dst, const PatchGrid& grid, int p,
                       double depth_tol) {
  PatchMatch out;
  const Eigen::Vector2i px = patch_center_pixel(grid, p);
  const double z = src.depth(px.y(), px.x());
  if (!(z > 0.0)) {
    out.status = MatchStatus::kNoDepth;
    return out;
  }
  out.world = src.camera.unproject(px.x() + 0.5, px.y() + 0.5, z);
  const auto proj = dst.camera.project(out.world);
  if (!proj) {
    out.status = MatchStatus::kOutOfBounds;
    return out;
  }
  out.landing = proj->head<2>();
  out.projected_depth = proj->z();
  const double u = proj->x(), v = proj->y();
  const auto q = patch_of_pixel(grid, u, v);
  if (!(u >= 0.0 && v >= 0.0 && u < dst.width() && v < dst.height()) || !q) {
    out.status = MatchStatus::kOutOfBounds;
    return out;
  }
  const int x = static_cast<int>(u), y = static_cast<int>(v);
  const double zp = proj->z();
  const double tol = depth_tol * zp;
  const double dj = dst.depth(y, x);
  if (dj > 0.0 && std::abs(zp - dj) <= tol) {
    out.status = MatchStatus::kMatched;
    out.q = *q;
    return out;
  }
  // Occluded only when the whole 3x3 around the landing pixel has depth in front of
  // the point. Silhouette pixels (background nearby) are grazing views, not occlusion.
  bool in_front_everywhere = dj > 0.0;
  for (int yy = std::max(0, y - 1); yy <= std::min(dst.height() - 1, y + 1) && in_front_everywhere; ++yy)
    for (int xx = std::max(0, x - 1); xx <= std::min(dst.width() - 1, x + 1); ++xx) {
      const double d = dst.depth(yy, xx);
      if (d <= 0.0 || zp - d <= tol) {
        in_front_everywhere = false;
        break;
      }
    }
  out.status = in_front_everywhere ? MatchStatus::kOccluded : MatchStatus::kDepthMismatch;
  return out;
}

CorrespondenceSet compute_correspondences(const ViewSet& vs, const PatchGrid& grid,
                                          const CorrespondenceOptions& options) {
  CorrespondenceSet out;
  out.num_views = vs.num_views();
  out.grid = grid;
  out.options = options;
  for (const auto& v : vs.views) {
    if (v.depth.size() == 0) throw DataError("view " + std::to_string(v.view_index) + " has no depth channel");
  }
  for (int i = 1; i <= vs.num_views(); ++i) {
    for (int j : neighbor_set(i, vs.num_views(), options.n, options.cyclic)) {
      ViewPairCorrespondence vp;
      vp.i = i;
      vp.j = j;
      const auto& src = vs.views[static_cast<std::size_t>(i - 1)];
      const auto& dst = vs.views[static_cast<std::size_t>(j - 1)];
      for (int p = 0; p < grid.num_patches(); ++p) {
        const auto m = match_patch(src, dst, grid, p, options.depth_tol);
        switch (m.status) {
          case MatchStatus::kMatched: vp.pairs.emplace_back(p, m.q); break;
          case MatchStatus::kNoDepth: ++vp.rejected.no_depth; break;
          case MatchStatus::kOutOfBounds: ++vp.rejected.out_of_bounds; break;
          case MatchStatus::kOccluded: ++vp.rejected.occluded; break;
          case MatchStatus::kDepthMismatch: ++vp.rejected.depth_mismatch; break;
        }
      }
      out.pairs.push_back(std::move(vp));
    }
  }
  return out;
}

void save_correspondences(const std::filesystem::path& prefix, const CorrespondenceSet& corr) {
  const std::size_t n = corr.total_pairs();
  Tensor t = Tensor::zeros({n, 4});
  std::size_t row = 0;
  nlohmann::json header;
  header["num_views"] = corr.num_views;
  header["grid"] = {{"rows", corr.grid.rows}, {"cols", corr.grid.cols}, {"patch_px", corr.grid.patch_px}};
  header["n"] = corr.options.n;
  header["depth_tol"] = corr.options.depth_tol;
  header["cyclic"] = corr.options.cyclic;
  header["view_pairs"] = nlohmann::json::array();
  for (const auto& vp : corr.pairs) {
    for (const auto& [p, q] : vp.pairs) {
      t.at2(row, 0) = static_cast<float>(vp.i);
      t.at2(row, 1) = static_cast<float>(vp.j);
      t.at2(row, 2) = static_cast<float>(p);
      t.at2(row, 3) = static_cast<float>(q);
      ++row;
    }
    header["view_pairs"].push_back({{"i", vp.i},
                                    {"j", vp.j},
                                    {"count", vp.pairs.size()},
                                    {"out_of_bounds", vp.rejected.out_of_bounds},
                                    {"occluded", vp.rejected.occluded},
                                    {"no_depth", vp.rejected.no_depth},
                                    {"depth_mismatch", vp.rejected.depth_mismatch}});
  }
  write_tensor(std::filesystem::path(prefix.string() + ".ft32"), t);
  write_json(std::filesystem::path(prefix.string() + ".json"), header);
}

CorrespondenceSet load_correspondences(const std::filesystem::path& prefix) {
  const auto header = read_json(std::filesystem::path(prefix.string() + ".json"));
  const Tensor t = read_tensor(std::filesystem::path(prefix.string() + ".ft32"));
  if (t.ndim() != 2 || t.shape[1] != 4) throw DataError("correspondence cache must be N x 4");
  CorrespondenceSet corr;
  try {
    corr.num_views = header.at("num_views").get<int>();
    corr.grid = PatchGrid{header.at("grid").at("rows").get<int>(), header.at("grid").at("cols").get<int>(),
                          header.at("grid").at("patch_px").get<int>()};
    corr.options.n = header.at("n").get<int>();
    corr.options.depth_tol = header.at("depth_tol").get<double>();
    corr.options.cyclic = header.at("cyclic").get<bool>();
    std::size_t row = 0;
    for (const auto& e : header.at("view_pairs")) {
      ViewPairCorrespondence vp;
      vp.i = e.at("i").get<int>();
      vp.j = e.at("j").get<int>();
      vp.rejected.out_of_bounds = e.at("out_of_bounds").get<long>();
      vp.rejected.occluded = e.at("occluded").get<long>();
      vp.rejected.no_depth = e.at("no_depth").get<long>();
      vp.rejected.depth_mismatch = e.at("depth_mismatch").get<long>();
      const auto count = e.at("count").get<std::size_t>();
      for (std::size_t k = 0; k < count; ++k, ++row) {
        if (row >= t.shape[0] || static_cast<int>(t.at2(row, 0)) != vp.i || static_cast<int>(t.at2(row, 1)) != vp.j) {
          throw DataError("correspondence cache rows disagree with header");
        }
        vp.pairs.emplace_back(static_cast<int>(t.at2(row, 2)), static_cast<int>(t.at2(row, 3)));
      }
      corr.pairs.push_back(std::move(vp));
    }
    if (row != t.shape[0]) throw DataError("correspondence cache has trailing rows");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("correspondence header: ") + e.what());
  }
  return corr;
}

}  // namespace sganet::mvga
