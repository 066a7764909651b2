// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sganet/synth.hpp"
#include "temp_dir.hpp"

using namespace sganet;
using namespace sganet::mvga;

namespace {

std::optional<double> ray_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double r) {
  const double b = o.dot(d);
  const double disc = b * b - (o.squaredNorm() - r * r);
  if (disc < 0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  return t > 0 ? std::optional<double>(t) : std::nullopt;
}

ViewSet sphere_ring(int views, int size) {
  synth::SceneSpec s;
  s.ring.num_views = views;
  s.height = size;
  s.width = size;
  return synth::render_viewset(s, std::nullopt, "sphere", Label::kNormal, 1);
}

}  // namespace

TEST_CASE("neighbour set examples") {
  CHECK(neighbor_set(5, 12, 2) == std::vector<int>{3, 4, 6, 7});
  CHECK(neighbor_set(1, 12, 2, true) == std::vector<int>{11, 12, 2, 3});
  CHECK(neighbor_set(1, 12, 2, false) == std::vector<int>{2, 3});
  CHECK(neighbor_set(2, 3, 2, true) == std::vector<int>{3, 1});
  CHECK(neighbor_set(1, 1, 1, true).empty());
}

TEST_CASE("a duplicated camera pose gives (p, p) for every patch with depth") {
  auto vs = sphere_ring(4, 48);
  vs.views[1] = vs.views[0];
  vs.views[1].view_index = 2;
  const auto grid = PatchGrid::for_image(48, 48, 8);
  const auto corr = compute_correspondences(vs, grid, {1, 0.02, false});
  const auto* vp = corr.find(1, 2);
  REQUIRE(vp != nullptr);
  int with_depth = 0;
  for (int p = 0; p < grid.num_patches(); ++p) {
    const auto c = patch_center_pixel(grid, p);
    if (vs.views[0].depth(c.y(), c.x()) > 0) ++with_depth;
  }
  CHECK(static_cast<int>(vp->pairs.size()) == with_depth);
  for (const auto& [p, q] : vp->pairs) CHECK(p == q);
  CHECK(vp->rejected.no_depth == grid.num_patches() - with_depth);
}

TEST_CASE("sphere ring correspondences match the analytic reprojection") {
  const auto vs = sphere_ring(12, 96);
  const auto grid = PatchGrid::for_image(96, 96, 8);
  const auto corr = compute_correspondences(vs, grid);
  int checked = 0;
  for (const auto& vp : corr.pairs) {
    const auto& ci = vs.views[static_cast<std::size_t>(vp.i - 1)].camera;
    const auto& cj = vs.views[static_cast<std::size_t>(vp.j - 1)].camera;
    for (const auto& [p, q] : vp.pairs) {
      const auto c = patch_center_pixel(grid, p);
      const auto dir = ci.ray_direction(c.x() + 0.5, c.y() + 0.5);
      const auto t = ray_sphere(ci.center(), dir, 1.0);
      REQUIRE(t);
      const auto uv = cj.project(ci.center() + *t * dir);
      REQUIRE(uv);
      CHECK(patch_of_pixel(grid, (*uv)(0), (*uv)(1)) == q);
      ++checked;
    }
  }
  CHECK(checked > 200);
  CHECK(corr.totals().occluded + corr.totals().out_of_bounds > 0);
}

TEST_CASE("a point hidden behind the sphere is rejected as occluded") {
  const auto vs = sphere_ring(12, 96);
  const auto grid = PatchGrid::for_image(96, 96, 8);
  // View 1 looks along -x; view 7 sits opposite. A front point of view 1 is
  // on the far side for view 7, so its ray is blocked by the near surface.
  const auto& src = vs.views[0];
  const auto& dst = vs.views[6];
  int occluded = 0;
  for (int p = 0; p < grid.num_patches(); ++p) {
    const auto m = match_patch(src, dst, grid, p, 0.02);
    if (m.status == MatchStatus::kNoDepth) continue;
    const Eigen::Vector3d cj = dst.camera.center();
    const auto t = ray_sphere(cj, (m.world - cj).normalized(), 1.0);
    REQUIRE(t);
    const bool visible = std::abs(*t - (m.world - cj).norm()) < 1e-3;
    if (!visible) {
      CHECK(m.status != MatchStatus::kMatched);
      if (m.status == MatchStatus::kOccluded) ++occluded;
    }
  }
  CHECK(occluded > 0);
  const auto corr = compute_correspondences(vs, grid, {6, 0.02, true});
  CHECK(corr.find(1, 7)->pairs.empty());
}

TEST_CASE("round trip lands within one patch away from grazing incidence") {
  const auto vs = sphere_ring(8, 128);
  const auto grid = PatchGrid::for_image(128, 128, 8);
  const auto corr = compute_correspondences(vs, grid);
  int total = 0, within = 0;
  for (const auto& vp : corr.pairs) {
    const auto& vi = vs.views[static_cast<std::size_t>(vp.i - 1)];
    const auto& vj = vs.views[static_cast<std::size_t>(vp.j - 1)];
    for (const auto& [p, q] : vp.pairs) {
      const auto fwd = match_patch(vi, vj, grid, p, 0.02);
      const auto back = match_patch(vj, vi, grid, q, 0.02);
      if (back.status != MatchStatus::kMatched) continue;
      const int dr = std::abs(back.q / grid.cols - p / grid.cols), dc = std::abs(back.q % grid.cols - p % grid.cols);
      const bool ok = std::max(dr, dc) <= 1;
      ++total;
      within += ok ? 1 : 0;
      // Sphere normal at the surface point against both viewing directions.
      const Eigen::Vector3d n = fwd.world.normalized();
      const double cos_i = n.dot((vi.camera.center() - fwd.world).normalized());
      const double cos_j = n.dot((vj.camera.center() - back.world).normalized());
      if (std::min(cos_i, cos_j) >= 0.5) CHECK(ok);
    }
  }
  CHECK(total > 1000);
  CHECK(within >= 0.9 * total);
}

TEST_CASE("mvga loss examples") {
  SampleFeatures<double> r;
  r.grid = {1, 1, 8};
  Matrixd zero = Matrixd::Zero(1, 2), other(1, 2);
  other << 3, 4;
  r.views = {{zero, zero}, {other, zero}};
  CorrespondenceSet corr;
  corr.num_views = 2;
  corr.pairs.push_back({1, 2, {{0, 0}}, {}});
  // One pair; modality averaging halves the 2D distance and the view mean halves again.
  CHECK(mvga_loss(r, corr) == doctest::Approx(5.0 / 4));
  r.views[1][1] = other;
  CHECK(mvga_loss(r, corr) == doctest::Approx(5.0 / 2));
  r.views[1] = r.views[0];
  CHECK(mvga_loss(r, corr) == 0.0);
  corr.num_views = 3;
  CHECK_THROWS_AS(mvga_loss(r, corr), UsageError);
}

TEST_CASE("mvga loss matches the loop oracle and is symmetric") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = oracle::random_features(rng, 4, 2, 2, 3, 3);
    const auto corr = oracle::random_correspondences(rng, 4, 4, 1 + trial % 2);
    const double l = mvga_loss(r, corr);
    CHECK(std::abs(l - oracle::mvga(r, corr)) < 1e-12);
    CHECK(l >= 0);
  }
  // Swapping the two views of a fully corresponding pair leaves the loss unchanged.
  auto r = oracle::random_features(rng, 2, 1, 3, 2, 2);
  CorrespondenceSet corr;
  corr.num_views = 2;
  corr.pairs.push_back({1, 2, {{0, 0}, {1, 1}, {2, 2}}, {}});
  corr.pairs.push_back({2, 1, {{0, 0}, {1, 1}, {2, 2}}, {}});
  const double before = mvga_loss(r, corr);
  std::swap(r.views[0], r.views[1]);
  CHECK(mvga_loss(r, corr) == doctest::Approx(before).epsilon(1e-14));
}

TEST_CASE("mvga gradient matches central differences away from the norm kink") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    auto r = oracle::random_features(rng, 4, 2, 2, 3, 3);
    const auto corr = oracle::random_correspondences(rng, 4, 4, 2);
    auto grad = r.zeros_like();
    mvga_loss(r, corr, &grad, 1.5);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i)
      for (auto m : kModalities)
        for (Eigen::Index e = 0; e < r.at(i, m).size(); ++e) {
          double& x = r.at(i, m).data()[e];
          const double x0 = x;
          x = x0 + h;
          const double up = 1.5 * mvga_loss(r, corr);
          x = x0 - h;
          const double down = 1.5 * mvga_loss(r, corr);
          x = x0;
          const double num = (up - down) / (2 * h);
          const double a = grad.at(i, m).data()[e];
          CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
        }
  }
}

TEST_CASE("correspondence cache round-trips") {
  TempDir dir("corr");
  const auto vs = sphere_ring(6, 48);
  const auto grid = PatchGrid::for_image(48, 48, 8);
  const auto corr = compute_correspondences(vs, grid);
  save_correspondences(dir / "s0", corr);
  const auto back = load_correspondences(dir / "s0");
  CHECK(back.num_views == corr.num_views);
  CHECK(back.total_pairs() == corr.total_pairs());
  REQUIRE(back.pairs.size() == corr.pairs.size());
  for (std::size_t t = 0; t < corr.pairs.size(); ++t) {
    CHECK(back.pairs[t].i == corr.pairs[t].i);
    CHECK(back.pairs[t].j == corr.pairs[t].j);
    CHECK(back.pairs[t].pairs == corr.pairs[t].pairs);
    CHECK(back.pairs[t].rejected.occluded == corr.pairs[t].rejected.occluded);
  }
}
