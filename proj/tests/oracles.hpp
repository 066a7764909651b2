// SPDX-License-Identifier: Apache-2.0
// Independent loop-based reference implementations and random instance
// generators shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "sganet/training.hpp"

namespace oracle {

using namespace sganet;

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec row(const Matrixd& m, int r) {
  Vec out(static_cast<std::size_t>(m.cols()));
  for (int c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

inline Vec matvec(const Matrixd& w, const Vec& x) {
  Vec out(static_cast<std::size_t>(w.rows()), 0.0);
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) out[static_cast<std::size_t>(r)] += w(r, c) * x[static_cast<std::size_t>(c)];
  return out;
}

inline double cos_or_zero(const Vec& a, const Vec& b) {
  const double na = norm(a), nb = norm(b);
  return (na == 0 || nb == 0) ? 0.0 : dot(a, b) / (na * nb);
}

// Ring neighbours i-1, i+1 (0-based), wrapped or dropped, deduplicated.
inline std::vector<int> ring_adjacent(int i, int views, bool cyclic) {
  std::vector<int> out;
  for (int j : {i - 1, i + 1}) {
    if (cyclic) j = (j + views) % views;
    if (j < 0 || j >= views || j == i) continue;
    if (std::find(out.begin(), out.end(), j) == out.end()) out.push_back(j);
  }
  return out;
}

// Brute-force candidate selection: score every patch of every adjacent view,
// stable-sort by descending score, keep k.
inline scfrm::CandidateSet select(const SampleFeatures<double>& f, double alpha, int k, bool cyclic) {
  scfrm::CandidateSet out;
  out.num_views = f.num_views();
  out.num_patches = f.num_patches();
  k = std::min(k, f.num_patches());
  out.k = k;
  for (auto m : kModalities) {
    auto& lists = out.lists[index_of(m)];
    lists.assign(static_cast<std::size_t>(f.num_views() * f.num_patches()), {});
    for (int i = 0; i < f.num_views(); ++i) {
      for (int p = 0; p < f.num_patches(); ++p) {
        auto& list = lists[static_cast<std::size_t>(i * f.num_patches() + p)];
        for (int j : ring_adjacent(i, f.num_views(), cyclic)) {
          std::vector<std::pair<double, int>> scored;
          for (int q = 0; q < f.num_patches(); ++q) {
            const double s = alpha * cos_or_zero(row(f.at(i, m), p), row(f.at(j, m), q)) +
                             (1 - alpha) * cos_or_zero(row(f.at(i, complement(m)), p), row(f.at(j, complement(m)), q));
            scored.emplace_back(s, q);
          }
          std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
          for (int t = 0; t < k; ++t) list.push_back({j, scored[static_cast<std::size_t>(t)].second});
        }
      }
    }
  }
  return out;
}

// Explicit-loop attention: logits q.k/sqrt(d), naive softmax, weighted sum of values.
inline SampleFeatures<double> refine(const SampleFeatures<double>& f, const scfrm::CandidateSet& cands,
                                     const ProjectionParamsd& params,
                                     std::vector<std::vector<double>>* weights_out = nullptr) {
  SampleFeatures<double> out = f.zeros_like();
  for (auto m : kModalities) {
    const auto& w = params.for_modality(m);
    const double d = static_cast<double>(f.dim(m));
    for (int i = 0; i < f.num_views(); ++i) {
      for (int p = 0; p < f.num_patches(); ++p) {
        const Vec q = matvec(w.wq, row(f.at(i, m), p));
        const auto& list = cands.at(i, p, m);
        Vec result(static_cast<std::size_t>(f.dim(m)), 0.0);
        if (list.empty()) {
          result = matvec(w.wv, row(f.at(i, m), p));
        } else {
          std::vector<double> e;
          double z = 0;
          for (const auto& c : list) {
            const double logit = dot(q, matvec(w.wk, row(f.at(c.view, m), c.patch))) / std::sqrt(d);
            e.push_back(std::exp(logit));
            z += e.back();
          }
          for (auto& x : e) x /= z;
          for (std::size_t t = 0; t < list.size(); ++t) {
            const Vec v = matvec(w.wv, row(f.at(list[t].view, m), list[t].patch));
            for (std::size_t c = 0; c < v.size(); ++c) result[c] += e[t] * v[c];
          }
          if (weights_out != nullptr) weights_out->push_back(e);
        }
        for (std::size_t c = 0; c < result.size(); ++c) out.at(i, m)(p, static_cast<int>(c)) = result[c];
      }
    }
  }
  return out;
}

inline std::vector<Vec> rows_of(const Matrixd& m, bool unit) {
  std::vector<Vec> out;
  for (int r = 0; r < m.rows(); ++r) {
    Vec v = row(m, r);
    if (unit) {
      const double n = norm(v);
      if (n > 0)
        for (auto& x : v) x /= n;
    }
    out.push_back(std::move(v));
  }
  return out;
}

// Direct InfoNCE of S = A B^T: -(1/P) sum_p log(exp(S_pp) / sum_q exp(S_pq)).
inline double infonce(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  const std::size_t n = a.size();
  double total = 0;
  for (std::size_t p = 0; p < n; ++p) {
    double denom = 0;
    for (std::size_t q = 0; q < n; ++q) denom += std::exp(dot(a[p], b[q]));
    total += -std::log(std::exp(dot(a[p], b[p])) / denom);
  }
  return total / static_cast<double>(n);
}

struct SspaValue {
  double view = 0, diff = 0;
};

inline SspaValue sspa(const SampleFeatures<double>& r, bool normalize = true) {
  SspaValue out;
  const int views = r.num_views();
  for (int i = 0; i < views; ++i) {
    out.view += infonce(rows_of(r.at(i, Modality::k2D), normalize), rows_of(r.at(i, Modality::k3D), normalize));
  }
  out.view /= views;
  for (int i = 0; i + 1 < views; ++i) {
    Matrixd d2(r.num_patches(), r.dim(Modality::k2D)), d3(r.num_patches(), r.dim(Modality::k3D));
    for (int p = 0; p < r.num_patches(); ++p) {
      for (int c = 0; c < d2.cols(); ++c) d2(p, c) = r.at(i + 1, Modality::k2D)(p, c) - r.at(i, Modality::k2D)(p, c);
      for (int c = 0; c < d3.cols(); ++c) d3(p, c) = r.at(i + 1, Modality::k3D)(p, c) - r.at(i, Modality::k3D)(p, c);
    }
    out.diff += infonce(rows_of(d2, normalize), rows_of(d3, normalize));
  }
  if (views > 1) out.diff /= (views - 1);
  return out;
}

inline double mvga(const SampleFeatures<double>& r, const mvga::CorrespondenceSet& corr) {
  double total = 0;
  for (int i = 1; i <= r.num_views(); ++i) {
    double sum_j = 0;
    int nonempty = 0;
    for (const auto& vp : corr.pairs) {
      if (vp.i != i || vp.pairs.empty()) continue;
      double per_modality = 0;
      for (auto m : kModalities) {
        double s = 0;
        for (const auto& [p, q] : vp.pairs) {
          Vec a = row(r.at(vp.i - 1, m), p), b = row(r.at(vp.j - 1, m), q);
          for (std::size_t c = 0; c < a.size(); ++c) a[c] -= b[c];
          s += norm(a);
        }
        per_modality += s / static_cast<double>(vp.pairs.size());
      }
      sum_j += per_modality / 2.0;
      ++nonempty;
    }
    if (nonempty > 0) total += sum_j / nonempty;
  }
  return total / r.num_views();
}

inline double total_loss(const SampleFeatures<double>& f, const scfrm::CandidateSet& cands,
                         const mvga::CorrespondenceSet& corr, const ProjectionParamsd& params, const TrainConfig& c) {
  const auto r = refine(f, cands, params);
  const auto s = sspa(r);
  const double l_sspa = (c.use_view ? s.view : 0.0) + (c.use_diff ? s.diff : 0.0);
  return c.lambda_sspa * l_sspa + c.lambda_mvga * mvga(r, corr);
}

// Enumerates every threshold directly: predicted positive iff score >= t.
inline double exhaustive_aupro(const Matrixf& map, const Matrixf& mask,
                               const std::vector<std::vector<std::pair<int, int>>>& regions, double limit) {
  std::set<float> distinct(map.data(), map.data() + map.size());
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  long negatives = 0;
  for (Eigen::Index e = 0; e < mask.size(); ++e) negatives += mask.data()[e] < 0.5f;
  for (auto it = distinct.rbegin(); it != distinct.rend(); ++it) {
    long fp = 0;
    for (Eigen::Index e = 0; e < map.size(); ++e) fp += (mask.data()[e] < 0.5f && map.data()[e] >= *it);
    double pro = 0;
    for (const auto& region : regions) {
      int hit = 0;
      for (auto [y, x] : region) hit += map(y, x) >= *it;
      pro += static_cast<double>(hit) / static_cast<double>(region.size());
    }
    pts.emplace_back(static_cast<double>(fp) / static_cast<double>(negatives), pro / static_cast<double>(regions.size()));
  }
  double area = 0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    auto [x0, y0] = pts[k - 1];
    auto [x1, y1] = pts[k];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += (x1 - x0) * (y0 + y1) / 2;
  }
  return area / limit;
}

// ---- random instances ----

inline Matrixd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrixd m(rows, cols);
  for (Eigen::Index t = 0; t < m.size(); ++t) m.data()[t] = g(rng);
  return m;
}

inline SampleFeatures<double> random_features(std::mt19937_64& rng, int views, int rows, int cols, int d_2d,
                                              int d_3d) {
  SampleFeatures<double> f;
  f.grid = {rows, cols, 8};
  for (int i = 0; i < views; ++i) f.views.push_back({random_matrix(rng, rows * cols, d_2d), random_matrix(rng, rows * cols, d_3d)});
  return f;
}

// Random correspondence sets over neighbour_set(i, I, n) with 1..P pairs each
// (some pairs left empty).
inline mvga::CorrespondenceSet random_correspondences(std::mt19937_64& rng, int views, int patches, int n) {
  mvga::CorrespondenceSet corr;
  corr.num_views = views;
  corr.options.n = n;
  std::uniform_int_distribution<int> pick(0, patches - 1), count(0, patches);
  for (int i = 1; i <= views; ++i) {
    for (int j : mvga::neighbor_set(i, views, n, true)) {
      mvga::ViewPairCorrespondence vp;
      vp.i = i;
      vp.j = j;
      const int c = count(rng);
      for (int t = 0; t < c; ++t) vp.pairs.emplace_back(pick(rng), pick(rng));
      corr.pairs.push_back(std::move(vp));
    }
  }
  return corr;
}

inline ProjectionParamsd random_params(std::mt19937_64& rng, int d_2d, int d_3d, double noise) {
  auto p = ProjectionParamsd::identity(d_2d, d_3d);
  p.for_each([&](Matrixd& w) { w += random_matrix(rng, static_cast<int>(w.rows()), static_cast<int>(w.cols()), noise); });
  return p;
}

struct GradCheck {
  double norm_rel = 0;   // ||a - n|| / max(||a||, ||n||)
  double max_entry = 0;  // max_e |a_e - n_e| / max(|a_e|, |n_e|, floor)
};

// Central differences of `loss` over every parameter entry.
template <typename Loss>
GradCheck check_gradient(const ProjectionParamsd& params, const ProjectionParamsd& analytic, Loss&& loss,
                         double h = 1e-4, double floor = 1e-6) {
  const Vectord w0 = params.flatten();
  const Vectord a = analytic.flatten();
  Vectord numeric(w0.size());
  auto p = params;
  for (Eigen::Index e = 0; e < w0.size(); ++e) {
    Vectord w = w0;
    w(e) = w0(e) + h;
    p.unflatten(w);
    const double up = loss(p);
    w(e) = w0(e) - h;
    p.unflatten(w);
    const double down = loss(p);
    numeric(e) = (up - down) / (2 * h);
  }
  GradCheck out;
  const double scale = std::max(a.norm(), numeric.norm());
  out.norm_rel = scale > 0 ? (a - numeric).norm() / scale : 0.0;
  for (Eigen::Index e = 0; e < a.size(); ++e) {
    const double denom = std::max({std::abs(a(e)), std::abs(numeric(e)), floor});
    out.max_entry = std::max(out.max_entry, std::abs(a(e) - numeric(e)) / denom);
  }
  return out;
}

}  // namespace oracle
