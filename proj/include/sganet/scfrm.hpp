// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "sganet/common.hpp"
#include "sganet/data_model.hpp"

namespace sganet::scfrm {

// Cosine similarity; 0 when either vector is zero.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm(), nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) return Scalar(0);
  return a.dot(b) / (na * nb);
}

// alpha * cos(same modality) + (1 - alpha) * cos(complementary modality).
template <typename DA, typename DB, typename DC, typename DD>
typename DA::Scalar modality_aware_similarity(const Eigen::MatrixBase<DA>& f_i, const Eigen::MatrixBase<DB>& f_j,
                                              const Eigen::MatrixBase<DC>& fbar_i,
                                              const Eigen::MatrixBase<DD>& fbar_j, typename DA::Scalar alpha) {
  return alpha * cosine(f_i, f_j) + (typename DA::Scalar(1) - alpha) * cosine(fbar_i, fbar_j);
}

// Rows scaled to unit L2 norm; zero rows stay zero.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& m) {
  Matrix<Scalar> out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Scalar n = out.row(r).norm();
    if (n > Scalar(0)) out.row(r) /= n;
  }
  return out;
}

// Indices of the k largest scores, best first; ties go to the lower index.
template <typename Scalar>
std::vector<int> top_k_indices(std::span<const Scalar> scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

// Distinct ring neighbours i-1 and i+1 (0-based). Non-cyclic mode drops
// out-of-range neighbours.
inline std::vector<int> adjacent_views(int i, int num_views, bool cyclic) {
  std::vector<int> out;
  for (int delta : {-1, +1}) {
    int j = i + delta;
    if (cyclic) {
      j = ((j % num_views) + num_views) % num_views;
    } else if (j < 0 || j >= num_views) {
      continue;
    }
    if (j != i && std::find(out.begin(), out.end(), j) == out.end()) out.push_back(j);
  }
  return out;
}

struct Candidate {
  int view = 0;   // 0-based
  int patch = 0;  // 0-based
  bool operator==(const Candidate&) const = default;
};

// Candidate (view, patch) pairs per query, fixed before any projection is applied.
struct CandidateSet {
  int num_views = 0;
  int num_patches = 0;
  int k = 0;
  std::array<std::vector<std::vector<Candidate>>, 2> lists;

  const std::vector<Candidate>& at(int view, int patch, Modality m) const {
    return lists[index_of(m)][static_cast<std::size_t>(view * num_patches + patch)];
  }
  bool operator==(const CandidateSet&) const = default;
};

struct SelectionOptions {
  double alpha = 0.8;
  int k = 8;
  bool cyclic = true;
};

template <typename Scalar>
CandidateSet select_candidates(const SampleFeatures<Scalar>& f, const SelectionOptions& opt,
                               Warnings* warnings = nullptr) {
  const int num_views = f.num_views();
  const int num_patches = f.num_patches();
  if (opt.k < 1) throw UsageError("k must be >= 1");
  int k = opt.k;
  if (k > num_patches) {
    warn(warnings, "k=" + std::to_string(k) + " exceeds P=" + std::to_string(num_patches) + "; clamped");
    k = num_patches;
  }
  if (num_views < 2) warn(warnings, "fewer than two views: candidate sets are empty");

  CandidateSet out;
  out.num_views = num_views;
  out.num_patches = num_patches;
  out.k = k;
  std::vector<std::array<Matrix<Scalar>, 2>> unit(static_cast<std::size_t>(num_views));
  for (int i = 0; i < num_views; ++i)
    for (auto m : kModalities) unit[static_cast<std::size_t>(i)][index_of(m)] = normalize_rows(f.at(i, m));

  const auto alpha = static_cast<Scalar>(opt.alpha);
  for (auto m : kModalities) {
    auto& lists = out.lists[index_of(m)];
    lists.assign(static_cast<std::size_t>(num_views * num_patches), {});
    const int a = index_of(m), b = index_of(complement(m));
    for (int i = 0; i < num_views; ++i) {
      for (int j : adjacent_views(i, num_views, opt.cyclic)) {
        const auto& ui = unit[static_cast<std::size_t>(i)];
        const auto& uj = unit[static_cast<std::size_t>(j)];
        const Matrix<Scalar> sim =
            alpha * (ui[a] * uj[a].transpose()) + (Scalar(1) - alpha) * (ui[b] * uj[b].transpose());
        for (int p = 0; p < num_patches; ++p) {
          const std::span<const Scalar> row(sim.row(p).data(), static_cast<std::size_t>(num_patches));
          auto& list = lists[static_cast<std::size_t>(i * num_patches + p)];
          for (int q : top_k_indices(row, k)) list.push_back({j, q});
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
struct ProjectionSet {
  Matrix<Scalar> wq, wk, wv;
};

// Learnable query/key/value projections, one set per modality unless shared.
template <typename Scalar>
struct ProjectionParams {
  std::array<ProjectionSet<Scalar>, 2> sets;
  bool shared = false;

  ProjectionSet<Scalar>& for_modality(Modality m) { return sets[shared ? 0 : index_of(m)]; }
  const ProjectionSet<Scalar>& for_modality(Modality m) const { return sets[shared ? 0 : index_of(m)]; }
  int num_sets() const { return shared ? 1 : 2; }

  static ProjectionParams identity(int d_2d, int d_3d, bool shared = false) {
    if (shared && d_2d != d_3d) throw UsageError("shared projections need d_2d == d_3d");
    ProjectionParams p;
    p.shared = shared;
    const int dims[2] = {d_2d, d_3d};
    for (int s = 0; s < 2; ++s) {
      const auto eye = Matrix<Scalar>::Identity(dims[s], dims[s]);
      p.sets[s] = {eye, eye, eye};
    }
    return p;
  }

  ProjectionParams zeros_like() const {
    ProjectionParams out = *this;
    out.for_each([](Matrix<Scalar>& w) { w.setZero(); });
    return out;
  }

  // Visits every trainable matrix in a fixed order (set, then q, k, v).
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (int s = 0; s < num_sets(); ++s) {
      fn(sets[s].wq);
      fn(sets[s].wk);
      fn(sets[s].wv);
    }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (int s = 0; s < num_sets(); ++s) {
      fn(sets[s].wq);
      fn(sets[s].wk);
      fn(sets[s].wv);
    }
  }

  Eigen::Index num_entries() const {
    Eigen::Index n = 0;
    for_each([&n](const Matrix<Scalar>& w) { n += w.size(); });
    return n;
  }

  Vector<Scalar> flatten() const {
    Vector<Scalar> out(num_entries());
    Eigen::Index at = 0;
    for_each([&](const Matrix<Scalar>& w) {
      out.segment(at, w.size()) = Eigen::Map<const Vector<Scalar>>(w.data(), w.size());
      at += w.size();
    });
    return out;
  }

  void unflatten(const Vector<Scalar>& v) {
    Eigen::Index at = 0;
    for_each([&](Matrix<Scalar>& w) {
      Eigen::Map<Vector<Scalar>>(w.data(), w.size()) = v.segment(at, w.size());
      at += w.size();
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&ok](const Matrix<Scalar>& w) { ok = ok && w.allFinite(); });
    return ok;
  }

  template <typename Other>
  ProjectionParams<Other> cast() const {
    ProjectionParams<Other> out;
    out.shared = shared;
    for (int s = 0; s < 2; ++s) {
      out.sets[s].wq = sets[s].wq.template cast<Other>();
      out.sets[s].wk = sets[s].wk.template cast<Other>();
      out.sets[s].wv = sets[s].wv.template cast<Other>();
    }
    return out;
  }
};

// Softmax with max subtraction.
template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  if (logits.size() == 0) return logits;
  const Scalar mx = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

struct RefineOptions {
  // Adds the unprojected query feature to the aggregated value.
  bool residual = false;
};

// Intermediate values retained for the backward pass.
template <typename Scalar>
struct RefineCache {
  std::vector<std::array<Matrix<Scalar>, 2>> q, k, v;
  std::array<std::vector<Vector<Scalar>>, 2> weights;  // [m][i * P + p]
};

// Cross-view attention over each query's candidates:
// refined = sum_c softmax_c(q . k_c / sqrt(d)) * v_c.
template <typename Scalar>
SampleFeatures<Scalar> refine(const SampleFeatures<Scalar>& f, const CandidateSet& cands,
                              const ProjectionParams<Scalar>& params, const RefineOptions& opt = {},
                              RefineCache<Scalar>* cache = nullptr, Warnings* warnings = nullptr) {
  const int num_views = f.num_views();
  const int num_patches = f.num_patches();
  if (cands.num_views != num_views || cands.num_patches != num_patches) {
    throw UsageError("candidate set was built for different features");
  }
  RefineCache<Scalar> local;
  RefineCache<Scalar>& c = cache != nullptr ? *cache : local;
  c.q.assign(static_cast<std::size_t>(num_views), {});
  c.k.assign(static_cast<std::size_t>(num_views), {});
  c.v.assign(static_cast<std::size_t>(num_views), {});

  SampleFeatures<Scalar> out = f;
  bool degenerate = false;
  for (auto m : kModalities) {
    const int mi = index_of(m);
    const auto& w = params.for_modality(m);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(f.dim(m)));
    for (int i = 0; i < num_views; ++i) {
      const auto& fi = f.at(i, m);
      c.q[static_cast<std::size_t>(i)][mi] = fi * w.wq.transpose();
      c.k[static_cast<std::size_t>(i)][mi] = fi * w.wk.transpose();
      c.v[static_cast<std::size_t>(i)][mi] = fi * w.wv.transpose();
    }
    auto& weights = c.weights[mi];
    weights.assign(static_cast<std::size_t>(num_views * num_patches), {});
    for (int i = 0; i < num_views; ++i) {
      auto& dst = out.at(i, m);
      const auto& qi = c.q[static_cast<std::size_t>(i)][mi];
      for (int p = 0; p < num_patches; ++p) {
        const auto& list = cands.at(i, p, m);
        if (list.empty()) {
          degenerate = true;
          dst.row(p) = c.v[static_cast<std::size_t>(i)][mi].row(p);
        } else {
          Vector<Scalar> logits(static_cast<Eigen::Index>(list.size()));
          for (std::size_t t = 0; t < list.size(); ++t) {
            logits(static_cast<Eigen::Index>(t)) =
                qi.row(p).dot(c.k[static_cast<std::size_t>(list[t].view)][mi].row(list[t].patch)) * scale;
          }
          Vector<Scalar> a = softmax(logits);
          dst.row(p).setZero();
          for (std::size_t t = 0; t < list.size(); ++t) {
            dst.row(p) += a(static_cast<Eigen::Index>(t)) *
                          c.v[static_cast<std::size_t>(list[t].view)][mi].row(list[t].patch);
          }
          weights[static_cast<std::size_t>(i * num_patches + p)] = std::move(a);
        }
        if (opt.residual) dst.row(p) += f.at(i, m).row(p);
      }
    }
  }
  if (degenerate) warn(warnings, "degenerate input: queries without candidates fall back to W_v f");
  return out;
}

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(refined). `cache`
// must come from refine() on the same inputs.
template <typename Scalar>
void refine_backward(const SampleFeatures<Scalar>& f, const CandidateSet& cands,
                     const ProjectionParams<Scalar>& params, const RefineCache<Scalar>& cache,
                     const SampleFeatures<Scalar>& grad_refined, ProjectionParams<Scalar>& grad) {
  const int num_views = f.num_views();
  const int num_patches = f.num_patches();
  for (auto m : kModalities) {
    const int mi = index_of(m);
    const int d = f.dim(m);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
    std::vector<Matrix<Scalar>> dq, dk, dv;
    for (int i = 0; i < num_views; ++i) {
      dq.push_back(Matrix<Scalar>::Zero(num_patches, params.for_modality(m).wq.rows()));
      dk.push_back(Matrix<Scalar>::Zero(num_patches, params.for_modality(m).wk.rows()));
      dv.push_back(Matrix<Scalar>::Zero(num_patches, params.for_modality(m).wv.rows()));
    }
    for (int i = 0; i < num_views; ++i) {
      const auto& g_all = grad_refined.at(i, m);
      for (int p = 0; p < num_patches; ++p) {
        const auto g = g_all.row(p);
        const auto& list = cands.at(i, p, m);
        if (list.empty()) {
          dv[static_cast<std::size_t>(i)].row(p) += g;
          continue;
        }
        const auto& a = cache.weights[mi][static_cast<std::size_t>(i * num_patches + p)];
        const auto n = static_cast<Eigen::Index>(list.size());
        Vector<Scalar> gv(n);
        for (Eigen::Index t = 0; t < n; ++t) {
          const auto& cand = list[static_cast<std::size_t>(t)];
          gv(t) = g.dot(cache.v[static_cast<std::size_t>(cand.view)][mi].row(cand.patch));
        }
        const Scalar mean_gv = a.dot(gv);
        const auto q_row = cache.q[static_cast<std::size_t>(i)][mi].row(p);
        for (Eigen::Index t = 0; t < n; ++t) {
          const auto& cand = list[static_cast<std::size_t>(t)];
          const auto j = static_cast<std::size_t>(cand.view);
          dv[j].row(cand.patch) += a(t) * g;
          const Scalar dlogit = a(t) * (gv(t) - mean_gv) * scale;
          dq[static_cast<std::size_t>(i)].row(p) += dlogit * cache.k[j][mi].row(cand.patch);
          dk[j].row(cand.patch) += dlogit * q_row;
        }
      }
    }
    auto& gset = grad.for_modality(m);
    for (int i = 0; i < num_views; ++i) {
      const auto& fi = f.at(i, m);
      gset.wq.noalias() += dq[static_cast<std::size_t>(i)].transpose() * fi;
      gset.wk.noalias() += dk[static_cast<std::size_t>(i)].transpose() * fi;
      gset.wv.noalias() += dv[static_cast<std::size_t>(i)].transpose() * fi;
    }
  }
}

}  // namespace sganet::scfrm
