// SPDX-License-Identifier: Apache-2.0
#include "sganet/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace sganet::scoring {

namespace fs = std::filesystem;

std::string bank_modalities_name(BankModalities b) {
  switch (b) {
    case BankModalities::kFused: return "fused";
    case BankModalities::k2DOnly: return "2d";
    case BankModalities::k3DOnly: return "3d";
  }
  return "fused";
}

Matrixd bank_rows(const SampleFeatures<double>& refined, int view, BankModalities which) {
  switch (which) {
    case BankModalities::k2DOnly: return refined.at(view, Modality::k2D);
    case BankModalities::k3DOnly: return refined.at(view, Modality::k3D);
    default: return fuse(refined.at(view, Modality::k2D), refined.at(view, Modality::k3D));
  }
}

std::vector<int> farthest_point_coreset(const Matrixd& points, std::size_t keep) {
  const auto n = static_cast<std::size_t>(points.rows());
  keep = std::min(keep, n);
  std::vector<int> out;
  if (keep == 0) return out;
  const Eigen::RowVectorXd mean = points.colwise().mean();
  Eigen::Index start = 0;
  (points.rowwise() - mean).rowwise().squaredNorm().maxCoeff(&start);
  Vectord min_dist = Vectord::Constant(static_cast<Eigen::Index>(n), std::numeric_limits<double>::infinity());
  Eigen::Index next = start;
  while (out.size() < keep) {
    out.push_back(static_cast<int>(next));
    min_dist = min_dist.cwiseMin((points.rowwise() - points.row(next)).rowwise().squaredNorm());
    // Eigen's maxCoeff returns the first maximal index.
    min_dist.maxCoeff(&next);
  }
  return out;
}

MemoryBank build_bank(const std::vector<BankSource>& sources, double coreset_ratio, BankModalities which) {
  if (sources.empty()) throw DataError("memory bank needs at least one training sample");
  if (!(coreset_ratio > 0.0 && coreset_ratio <= 1.0)) throw UsageError("coreset ratio must lie in (0, 1]");
  MemoryBank bank;
  bank.modalities = which;
  std::vector<Matrixd> blocks;
  Eigen::Index rows = 0, cols = -1;
  for (const auto& src : sources) {
    for (int i = 0; i < src.refined.num_views(); ++i) {
      blocks.push_back(bank_rows(src.refined, i, which));
      if (cols >= 0 && blocks.back().cols() != cols) throw DataError("bank sources disagree on feature dims");
      cols = blocks.back().cols();
      rows += blocks.back().rows();
      for (int p = 0; p < src.refined.num_patches(); ++p) bank.provenance.push_back({src.sample_id, i + 1, p});
    }
  }
  bank.entries.resize(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    bank.entries.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  if (coreset_ratio < 1.0) {
    const auto keep = static_cast<std::size_t>(std::ceil(coreset_ratio * static_cast<double>(rows)));
    bank.coreset_indices = farthest_point_coreset(bank.entries, keep);
    Matrixd kept(static_cast<Eigen::Index>(keep), cols);
    std::vector<Provenance> prov;
    for (std::size_t r = 0; r < bank.coreset_indices.size(); ++r) {
      kept.row(static_cast<Eigen::Index>(r)) = bank.entries.row(bank.coreset_indices[r]);
      prov.push_back(bank.provenance[static_cast<std::size_t>(bank.coreset_indices[r])]);
    }
    bank.entries = std::move(kept);
    bank.provenance = std::move(prov);
  }
  return bank;
}

Vectord nearest_distances(const Matrixd& queries, const Matrixd& bank) {
  if (bank.rows() == 0) throw DataError("memory bank is empty");
  if (queries.cols() != bank.cols()) {
    throw DataError("query dim " + std::to_string(queries.cols()) + " does not match bank dim " +
                    std::to_string(bank.cols()));
  }
  // Expanded squared distances pick the neighbour; the reported distance is
  // recomputed directly so exact matches score exactly zero.
  const Vectord bank_sq = bank.rowwise().squaredNorm();
  Vectord out(queries.rows());
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < queries.rows(); start += kBlock) {
    const Eigen::Index n = std::min(kBlock, queries.rows() - start);
    const auto q = queries.middleRows(start, n);
    Matrixd d2 = -2.0 * (q * bank.transpose());
    d2.rowwise() += bank_sq.transpose();
    for (Eigen::Index r = 0; r < n; ++r) {
      Eigen::Index best = 0;
      d2.row(r).minCoeff(&best);
      out(start + r) = (q.row(r) - bank.row(best)).norm();
    }
  }
  return out;
}

Matrixf gaussian_blur(const Matrixf& img, double sigma, double truncate) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(truncate * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (auto& w : kernel) w /= sum;
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  Matrixd tmp(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * img(y, std::clamp(x + k, 0, w - 1));
      tmp(y, x) = acc;
    }
  Matrixf out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(std::clamp(y + k, 0, h - 1), x);
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

Matrixf render_anomaly_map(const Vectord& patch_scores, const PatchGrid& grid, int height, int width,
                           const MapOptions& opt) {
  if (patch_scores.size() != grid.num_patches()) throw UsageError("patch score count does not match grid");
  Matrixf up(height, width);
  auto sample_axis = [](double pix, int px, int n, int& lo, int& hi, double& t) {
    const double g = std::clamp((pix + 0.5) / px - 0.5, 0.0, static_cast<double>(n - 1));
    lo = static_cast<int>(std::floor(g));
    hi = std::min(lo + 1, n - 1);
    t = g - lo;
  };
  for (int y = 0; y < height; ++y) {
    int r0, r1;
    double ty;
    sample_axis(y, grid.patch_px, grid.rows, r0, r1, ty);
    for (int x = 0; x < width; ++x) {
      int c0, c1;
      double tx;
      sample_axis(x, grid.patch_px, grid.cols, c0, c1, tx);
      const double a = patch_scores(r0 * grid.cols + c0), b = patch_scores(r0 * grid.cols + c1);
      const double c = patch_scores(r1 * grid.cols + c0), d = patch_scores(r1 * grid.cols + c1);
      up(y, x) = static_cast<float>((1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d));
    }
  }
  return gaussian_blur(up, opt.sigma, opt.truncate);
}

AnomalyResult score_refined(const SampleFeatures<double>& refined, const MemoryBank& bank, int height, int width,
                            const MapOptions& opt) {
  AnomalyResult out;
  for (int i = 0; i < refined.num_views(); ++i) {
    ViewResult v;
    v.patch_scores = nearest_distances(bank_rows(refined, i, bank.modalities), bank.entries);
    v.map = render_anomaly_map(v.patch_scores, refined.grid, height, width, opt);
    v.score = std::max(0.0, static_cast<double>(v.map.maxCoeff()));
    out.score = std::max(out.score, v.score);
    out.views.push_back(std::move(v));
  }
  return out;
}

SampleFeatures<double> refine_sample(const ViewSet& vs, const ProjectionParamsd& params,
                                     const ExtractorSpec& extractor, const TrainConfig& config, Warnings* warnings) {
  const auto raw = extract_sample(extractor, vs, warnings);
  const auto cands = scfrm::select_candidates(raw, config.selection(), warnings);
  return scfrm::refine(raw, cands, params, config.refine_options(), static_cast<scfrm::RefineCache<double>*>(nullptr), warnings);
}

MemoryBank build_bank(const std::vector<ViewSet>& train, const ProjectionParamsd& params,
                      const ExtractorSpec& extractor, const TrainConfig& config, double coreset_ratio,
                      BankModalities which) {
  std::vector<BankSource> sources;
  for (const auto& vs : train) {
    if (vs.label != Label::kNormal) throw DataError("memory bank accepts only normal samples (" + vs.sample_id + ")");
    sources.push_back({vs.sample_id, refine_sample(vs, params, extractor, config)});
  }
  return build_bank(sources, coreset_ratio, which);
}

AnomalyResult score_sample(const ViewSet& test, const MemoryBank& bank, const ProjectionParamsd& params,
                           const ExtractorSpec& extractor, const TrainConfig& config, const MapOptions& opt) {
  auto result =
      score_refined(refine_sample(test, params, extractor, config), bank, test.height(), test.width(), opt);
  result.sample_id = test.sample_id;
  result.label = test.label;
  return result;
}

void save_bank(const fs::path& dir, const MemoryBank& bank) {
  fs::create_directories(dir);
  write_tensor(dir / "bank.ft32", to_tensor(bank.entries));
  nlohmann::json j;
  j["modalities"] = bank_modalities_name(bank.modalities);
  j["coreset_indices"] = bank.coreset_indices;
  j["provenance"] = nlohmann::json::array();
  for (const auto& p : bank.provenance) j["provenance"].push_back({p.sample_id, p.view, p.patch});
  write_json(dir / "bank.json", j);
}

MemoryBank load_bank(const fs::path& dir) {
  MemoryBank bank;
  bank.entries = to_matrix<double>(read_tensor(dir / "bank.ft32"));
  const auto j = read_json(dir / "bank.json");
  const auto mod = j.value("modalities", std::string("fused"));
  bank.modalities = mod == "2d" ? BankModalities::k2DOnly : mod == "3d" ? BankModalities::k3DOnly
                                                                          : BankModalities::kFused;
  bank.coreset_indices = j.value("coreset_indices", std::vector<int>{});
  for (const auto& p : j.at("provenance")) {
    bank.provenance.push_back({p.at(0).get<std::string>(), p.at(1).get<int>(), p.at(2).get<int>()});
  }
  if (static_cast<Eigen::Index>(bank.provenance.size()) != bank.entries.rows()) {
    throw DataError("bank provenance does not match entry count");
  }
  return bank;
}

void write_pgm(const fs::path& path, const Matrixf& map, float lo, float hi) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  const float range = hi > lo ? hi - lo : 1.0f;
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    const float t = std::clamp((map.data()[i] - lo) / range, 0.0f, 1.0f);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0f))));
  }
}

void save_maps(const fs::path& dir, const AnomalyResult& result, bool pgm) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < result.views.size(); ++i) {
    const auto name = view_dir_name(static_cast<int>(i) + 1);
    write_tensor(dir / (name + ".ft32"), to_tensor(result.views[i].map));
    if (pgm) write_pgm(dir / (name + ".pgm"), result.views[i].map, 0.0f, static_cast<float>(result.score));
  }
}

}  // namespace sganet::scoring
