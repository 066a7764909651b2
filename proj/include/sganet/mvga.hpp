// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "sganet/common.hpp"
#include "sganet/data_model.hpp"

namespace sganet::mvga {

// {i-N, ..., i-1, i+1, ..., i+N} with 1-based view indices. Cyclic mode wraps
// modulo I; otherwise out-of-range entries are dropped. Duplicates and i
// itself are removed (only possible when 2N >= I).
std::vector<int> neighbor_set(int i, int num_views, int n, bool cyclic = true);

struct RejectionCounts {
  long out_of_bounds = 0;
  long occluded = 0;
  long no_depth = 0;
  // Depth disagrees at the landing pixel but occlusion is not certain (e.g. silhouettes).
  long depth_mismatch = 0;

  RejectionCounts& operator+=(const RejectionCounts& o);
};

struct ViewPairCorrespondence {
  int i = 1;  // 1-based source view
  int j = 1;  // 1-based target view
  std::vector<std::pair<int, int>> pairs;  // 0-based (p, q)
  RejectionCounts rejected;
};

struct CorrespondenceOptions {
  int n = 2;
  double depth_tol = 0.02;
  bool cyclic = true;
};

struct CorrespondenceSet {
  int num_views = 0;
  PatchGrid grid;
  CorrespondenceOptions options;
  std::vector<ViewPairCorrespondence> pairs;  // ordered by i, then neighbor_set order

  const ViewPairCorrespondence* find(int i, int j) const;
  RejectionCounts totals() const;
  std::size_t total_pairs() const;
};

enum class MatchStatus { kMatched, kNoDepth, kOutOfBounds, kOccluded, kDepthMismatch };

struct PatchMatch {
  MatchStatus status = MatchStatus::kNoDepth;
  int q = -1;
  Eigen::Vector3d world = Eigen::Vector3d::Zero();
  Eigen::Vector2d landing = Eigen::Vector2d::Zero();
  double projected_depth = 0.0;
};

// Projects the representative pixel of patch p in `src` into `dst`.
PatchMatch match_patch(const ViewObservation& src, const ViewObservation& dst, const PatchGrid& grid, int p,
                       double depth_tol);

CorrespondenceSet compute_correspondences(const ViewSet& vs, const PatchGrid& grid,
                                          const CorrespondenceOptions& options = {});

// Cache: <prefix>.ft32 holds rows (i, j, p, q) as floats; <prefix>.json the header.
void save_correspondences(const std::filesystem::path& prefix, const CorrespondenceSet& corr);
CorrespondenceSet load_correspondences(const std::filesystem::path& prefix);

// Mean over views of the mean over non-empty neighbour pairs of the
// modality-averaged mean L2 distance between corresponding refined features.
// With `grad`, adds weight * dL/d(refined) into it.
template <typename Scalar>
Scalar mvga_loss(const SampleFeatures<Scalar>& refined, const CorrespondenceSet& corr,
                 SampleFeatures<Scalar>* grad = nullptr, Scalar weight = Scalar(1)) {
  const int num_views = refined.num_views();
  if (corr.num_views != num_views) throw UsageError("correspondences built for a different view count");
  std::vector<std::vector<const ViewPairCorrespondence*>> by_view(static_cast<std::size_t>(num_views));
  for (const auto& vp : corr.pairs) {
    if (!vp.pairs.empty()) by_view[static_cast<std::size_t>(vp.i - 1)].push_back(&vp);
  }
  Scalar total = 0;
  constexpr Scalar kModalityCount = Scalar(2);
  for (int i = 0; i < num_views; ++i) {
    const auto& list = by_view[static_cast<std::size_t>(i)];
    if (list.empty()) continue;
    Scalar view_sum = 0;
    for (const auto* vp : list) {
      const Scalar pair_scale = Scalar(1) / (kModalityCount * static_cast<Scalar>(vp->pairs.size()));
      const Scalar grad_scale = weight * pair_scale /
                                (static_cast<Scalar>(num_views) * static_cast<Scalar>(list.size()));
      Scalar pair_sum = 0;
      for (auto m : kModalities) {
        const auto& fi = refined.at(vp->i - 1, m);
        const auto& fj = refined.at(vp->j - 1, m);
        for (const auto& [p, q] : vp->pairs) {
          const auto diff = (fi.row(p) - fj.row(q)).eval();
          const Scalar dist = diff.norm();
          pair_sum += dist;
          if (grad != nullptr && dist > Scalar(0)) {
            const auto g = (grad_scale / dist * diff).eval();
            grad->at(vp->i - 1, m).row(p) += g;
            grad->at(vp->j - 1, m).row(q) -= g;
          }
        }
      }
      view_sum += pair_sum * pair_scale;
    }
    total += view_sum / static_cast<Scalar>(list.size());
  }
  return total / static_cast<Scalar>(num_views);
}

}  // namespace sganet::mvga
