// SPDX-License-Identifier: Apache-2.0
#include "sganet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace sganet::metrics {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw UsageError("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] != 0) {
        rank_sum += mid_rank;
        pos += 1;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw DataError("auroc needs both positive and negative examples");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

void RegionSet::append(const RegionSet& other) {
  scores.insert(scores.end(), other.scores.begin(), other.scores.end());
  for (int r : other.region) region.push_back(r < 0 ? r : r + num_regions);
  num_regions += other.num_regions;
}

ProCurve pro_curve(const RegionSet& set) {
  if (set.scores.size() != set.region.size()) throw UsageError("region set: scores and regions differ in length");
  if (set.num_regions == 0) throw DataError("aupro needs at least one anomalous region");
  std::vector<double> region_size(static_cast<std::size_t>(set.num_regions), 0.0);
  double negatives = 0;
  for (int r : set.region) {
    if (r < 0) {
      negatives += 1;
    } else {
      region_size.at(static_cast<std::size_t>(r)) += 1;
    }
  }
  if (negatives == 0) throw DataError("aupro needs normal pixels to define a false-positive rate");
  std::vector<std::size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });

  ProCurve c;
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  c.fpr.push_back(0.0);
  c.pro.push_back(0.0);
  double fp = 0, pro_sum = 0;
  const double inv_regions = 1.0 / set.num_regions;
  for (std::size_t i = 0; i < order.size();) {
    const double t = set.scores[order[i]];
    for (; i < order.size() && set.scores[order[i]] == t; ++i) {
      const int r = set.region[order[i]];
      if (r < 0) {
        fp += 1;
      } else {
        pro_sum += inv_regions / region_size[static_cast<std::size_t>(r)];
      }
    }
    c.thresholds.push_back(t);
    c.fpr.push_back(fp / negatives);
    c.pro.push_back(std::min(1.0, pro_sum));
  }
  return c;
}

double area_to_limit(const std::vector<double>& fpr, const std::vector<double>& tpr, double limit) {
  if (!(limit > 0.0 && limit <= 1.0)) throw UsageError("integration limit must lie in (0, 1]");
  double area = 0.0;
  for (std::size_t i = 1; i < fpr.size(); ++i) {
    const double x0 = fpr[i - 1], x1 = fpr[i];
    if (x0 >= limit) break;
    if (x1 <= limit) {
      area += 0.5 * (x1 - x0) * (tpr[i - 1] + tpr[i]);
    } else {
      const double y = tpr[i - 1] + (tpr[i] - tpr[i - 1]) * (limit - x0) / (x1 - x0);
      area += 0.5 * (limit - x0) * (tpr[i - 1] + y);
    }
  }
  return std::clamp(area / limit, 0.0, 1.0);
}

double aupro(const RegionSet& set, double limit, ProCurve* curve) {
  auto c = pro_curve(set);
  const double a = area_to_limit(c.fpr, c.pro, limit);
  if (curve != nullptr) *curve = std::move(c);
  return a;
}

std::vector<int> label_components(const Matrixf& mask, int* count) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  std::vector<int> ids(static_cast<std::size_t>(h) * w, -1);
  int next = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (ids[static_cast<std::size_t>(start)] >= 0 || !(mask.data()[start] > 0.5f)) continue;
    ids[static_cast<std::size_t>(start)] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const int at = stack.back();
      stack.pop_back();
      const int y = at / w, x = at % w;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (ids[static_cast<std::size_t>(q)] >= 0 || !(mask.data()[q] > 0.5f)) continue;
        ids[static_cast<std::size_t>(q)] = next;
        stack.push_back(q);
      }
    }
    ++next;
  }
  if (count != nullptr) *count = next;
  return ids;
}

RegionSet pixel_regions(const std::vector<Matrixf>& maps, const std::vector<Matrixf>& masks) {
  if (!masks.empty() && masks.size() != maps.size()) throw UsageError("need one mask per map");
  RegionSet out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    RegionSet one;
    one.scores.assign(maps[i].data(), maps[i].data() + maps[i].size());
    const bool has_mask = !masks.empty() && masks[i].size() > 0;
    if (has_mask) {
      if (masks[i].rows() != maps[i].rows() || masks[i].cols() != maps[i].cols()) {
        throw DataError("mask and map shapes differ");
      }
      one.region = label_components(masks[i], &one.num_regions);
    } else {
      one.region.assign(one.scores.size(), -1);
    }
    out.append(one);
  }
  return out;
}

double aupro(const std::vector<Matrixf>& maps, const std::vector<Matrixf>& masks, double limit, ProCurve* curve) {
  return aupro(pixel_regions(maps, masks), limit, curve);
}

VoxelCloud project_scores_to_points(const ViewSet& vs, const std::vector<Matrixf>& maps, double voxel_size) {
  if (!(voxel_size > 0.0)) throw UsageError("voxel size must be > 0");
  if (maps.size() != vs.views.size()) throw UsageError("need one anomaly map per view");
  struct Acc {
    double sum = 0.0;
    int gt = 0;
    int n = 0;
  };
  std::map<std::array<long, 3>, Acc> grid;
  VoxelCloud cloud;
  cloud.voxel_size = voxel_size;
  for (std::size_t i = 0; i < vs.views.size(); ++i) {
    const auto& v = vs.views[i];
    if (v.depth.size() == 0 || !(v.depth.maxCoeff() > 0.0f)) {
      throw DataError("view " + std::to_string(v.view_index) + " of " + vs.sample_id + " has no depth");
    }
    if (maps[i].rows() != v.depth.rows() || maps[i].cols() != v.depth.cols()) {
      throw DataError("anomaly map shape differs from depth map");
    }
    for (int y = 0; y < v.height(); ++y) {
      for (int x = 0; x < v.width(); ++x) {
        const double z = v.depth(y, x);
        if (!(z > 0.0)) continue;
        const Eigen::Vector3d p = v.camera.unproject(x + 0.5, y + 0.5, z);
        const std::array<long, 3> key{static_cast<long>(std::floor(p.x() / voxel_size)),
                                      static_cast<long>(std::floor(p.y() / voxel_size)),
                                      static_cast<long>(std::floor(p.z() / voxel_size))};
        auto& acc = grid[key];
        acc.sum += maps[i](y, x);
        acc.n += 1;
        if (v.gt_mask && (*v.gt_mask)(y, x) > 0.5f) acc.gt = 1;
        ++cloud.num_points;
      }
    }
  }
  for (const auto& [key, acc] : grid) {
    cloud.voxels.push_back(key);
    cloud.scores.push_back(acc.sum / acc.n);
    cloud.gt.push_back(acc.gt);
    cloud.contributors.push_back(acc.n);
  }
  return cloud;
}

RegionSet voxel_regions(const VoxelCloud& cloud) {
  RegionSet out;
  out.scores = cloud.scores;
  out.region.assign(cloud.scores.size(), -1);
  std::map<std::array<long, 3>, std::size_t> index;
  for (std::size_t i = 0; i < cloud.voxels.size(); ++i) {
    if (cloud.gt[i] != 0) index.emplace(cloud.voxels[i], i);
  }
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < cloud.voxels.size(); ++s) {
    if (cloud.gt[s] == 0 || out.region[s] >= 0) continue;
    out.region[s] = out.num_regions;
    stack.push_back(s);
    while (!stack.empty()) {
      const auto at = stack.back();
      stack.pop_back();
      for (int axis = 0; axis < 3; ++axis) {
        for (int step : {-1, 1}) {
          auto key = cloud.voxels[at];
          key[static_cast<std::size_t>(axis)] += step;
          const auto it = index.find(key);
          if (it == index.end() || out.region[it->second] >= 0) continue;
          out.region[it->second] = out.num_regions;
          stack.push_back(it->second);
        }
      }
    }
    ++out.num_regions;
  }
  return out;
}

namespace {

std::vector<int> region_labels(const RegionSet& set) {
  std::vector<int> labels(set.region.size());
  std::transform(set.region.begin(), set.region.end(), labels.begin(), [](int r) { return r >= 0 ? 1 : 0; });
  return labels;
}

MetricBlock evaluate_block(const std::vector<const EvalInput*>& inputs, const EvalOptions& opt,
                           std::map<double, ProCurve>* curves) {
  MetricBlock b;
  b.num_samples = inputs.size();
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto* in : inputs) {
    if (in->label == Label::kUnknown) throw DataError("sample " + in->sample_id + " has no label");
    scores.push_back(in->score);
    labels.push_back(in->label == Label::kAnomalous ? 1 : 0);
  }
  b.i_auroc = auroc(scores, labels);

  RegionSet pixels;
  for (const auto* in : inputs) pixels.append(pixel_regions(in->maps, in->masks));
  b.num_pixels = pixels.scores.size();
  b.num_regions = static_cast<std::size_t>(pixels.num_regions);
  b.p_auroc = auroc(pixels.scores, region_labels(pixels));
  const auto curve = pro_curve(pixels);
  for (double limit : opt.aupro_limits) {
    b.aupro[limit] = area_to_limit(curve.fpr, curve.pro, limit);
    if (curves != nullptr) {
      // Keep the curve up to the cap, thinned to about a thousand points.
      ProCurve kept;
      double last = -1.0;
      for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
        const bool past = curve.fpr[i] > limit;
        if (i == 0 || past || curve.fpr[i] - last >= limit * 1e-3) {
          kept.thresholds.push_back(curve.thresholds[i]);
          kept.fpr.push_back(curve.fpr[i]);
          kept.pro.push_back(curve.pro[i]);
          last = curve.fpr[i];
        }
        if (past) break;
      }
      (*curves)[limit] = std::move(kept);
    }
  }

  if (opt.point_metrics) {
    RegionSet points;
    for (const auto* in : inputs) {
      if (in->viewset == nullptr) throw UsageError("point metrics need the sample view sets");
      const auto cloud = project_scores_to_points(*in->viewset, in->maps, opt.voxel_size);
      b.num_points += cloud.num_points;
      points.append(voxel_regions(cloud));
    }
    b.num_voxels = points.scores.size();
    b.num_voxel_regions = static_cast<std::size_t>(points.num_regions);
    b.pv_auroc = auroc(points.scores, region_labels(points));
    const auto pcurve = pro_curve(points);
    for (double limit : opt.aupro_limits) b.pv_aupro[limit] = area_to_limit(pcurve.fpr, pcurve.pro, limit);
  }
  return b;
}

std::string limit_key(double limit) {
  std::ostringstream s;
  s << limit * 100.0 << '%';
  return s.str();
}

}  // namespace

EvalReport evaluate(const std::vector<EvalInput>& inputs, const EvalOptions& opt) {
  if (inputs.empty()) throw DataError("nothing to evaluate");
  EvalReport r;
  r.options = opt;
  std::vector<const EvalInput*> all;
  std::map<std::string, std::vector<const EvalInput*>> by_category;
  for (const auto& in : inputs) {
    all.push_back(&in);
    by_category[in.category].push_back(&in);
  }
  r.overall = evaluate_block(all, opt, &r.curves);
  for (const auto& [cat, items] : by_category) r.per_category[cat] = evaluate_block(items, opt, nullptr);
  return r;
}

nlohmann::json to_json(const MetricBlock& b, const EvalOptions& opt) {
  nlohmann::json j;
  j["i_auroc"] = b.i_auroc;
  j["p_auroc"] = b.p_auroc;
  j["aupro"] = nlohmann::json::object();
  for (const auto& [limit, v] : b.aupro) j["aupro"][limit_key(limit)] = v;
  if (opt.point_metrics) {
    j["pv_auroc"] = b.pv_auroc;
    j["pv_aupro"] = nlohmann::json::object();
    for (const auto& [limit, v] : b.pv_aupro) j["pv_aupro"][limit_key(limit)] = v;
  }
  j["counts"] = {{"samples", b.num_samples},   {"pixels", b.num_pixels}, {"pixel_regions", b.num_regions},
                 {"points", b.num_points},     {"voxels", b.num_voxels}, {"voxel_regions", b.num_voxel_regions}};
  return j;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = to_json(r.overall, r.options);
  j["per_category"] = nlohmann::json::object();
  for (const auto& [cat, b] : r.per_category) j["per_category"][cat] = to_json(b, r.options);
  j["settings"] = {{"aupro_limits", r.options.aupro_limits},
                   {"pv_voxel_size", r.options.voxel_size},
                   {"pv_connectivity", 6},
                   {"pixel_connectivity", 4},
                   {"pv_note", "pv_* metrics are point-projected approximations, not the official voxel protocol"}};
  return j;
}

std::string curves_csv(const EvalReport& r) {
  std::ostringstream s;
  s.precision(17);
  s << "limit,threshold,fpr,pro\n";
  for (const auto& [limit, c] : r.curves) {
    for (std::size_t i = 0; i < c.fpr.size(); ++i) {
      s << limit << ',' << c.thresholds[i] << ',' << c.fpr[i] << ',' << c.pro[i] << '\n';
    }
  }
  return s.str();
}

}  // namespace sganet::metrics
