// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sganet/common.hpp"
#include "sganet/data_model.hpp"
#include "sganet/scfrm.hpp"

namespace sganet::sspa {

// S = F2d * F3d^T. Both maps must share the feature dimension.
template <typename Scalar>
Matrix<Scalar> semantic_similarity_matrix(const Matrix<Scalar>& f2d, const Matrix<Scalar>& f3d) {
  if (f2d.cols() != f3d.cols()) {
    throw UsageError("cross-modal similarity needs d_2d == d_3d (got " + std::to_string(f2d.cols()) + " and " +
                     std::to_string(f3d.cols()) + ")");
  }
  if (f2d.rows() != f3d.rows()) throw UsageError("cross-modal similarity needs equal patch counts");
  return f2d * f3d.transpose();
}

// Row-wise InfoNCE with the diagonal as positives:
//   -(1/P) sum_p [S(p,p) - logsumexp_q S(p,q)].
// When `grad` is given it receives dL/dS.
template <typename Scalar>
Scalar infonce_rowwise(const Matrix<Scalar>& s, Matrix<Scalar>* grad = nullptr) {
  const Eigen::Index n = s.rows();
  if (s.cols() != n || n == 0) throw UsageError("InfoNCE needs a non-empty square matrix");
  if (grad != nullptr) grad->resize(n, n);
  Scalar total = 0;
  for (Eigen::Index p = 0; p < n; ++p) {
    const Scalar mx = s.row(p).maxCoeff();
    const auto e = (s.row(p).array() - mx).exp();
    const Scalar z = e.sum();
    total += s(p, p) - (mx + std::log(z));
    if (grad != nullptr) {
      grad->row(p) = (e / (z * static_cast<Scalar>(n))).matrix();
      (*grad)(p, p) -= Scalar(1) / static_cast<Scalar>(n);
    }
  }
  return -total / static_cast<Scalar>(n);
}

template <typename Scalar>
Matrix<Scalar> differential_features(const Matrix<Scalar>& next, const Matrix<Scalar>& cur) {
  if (next.rows() != cur.rows() || next.cols() != cur.cols()) {
    throw UsageError("differential features need equal shapes");
  }
  return next - cur;
}

// Backward of scfrm::normalize_rows: maps d/d(unit rows) to d/d(raw rows).
template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const Matrix<Scalar>& raw, const Matrix<Scalar>& grad_unit) {
  Matrix<Scalar> out = Matrix<Scalar>::Zero(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const Scalar n = raw.row(r).norm();
    if (n == Scalar(0)) continue;
    const auto u = raw.row(r) / n;
    out.row(r) = (grad_unit.row(r) - u * u.dot(grad_unit.row(r))) / n;
  }
  return out;
}

struct SspaOptions {
  bool use_view = true;
  bool use_diff = true;
  // Unit-normalize rows before building similarity matrices.
  bool normalize = true;
};

template <typename Scalar>
struct AlignmentLossReport {
  Scalar l_view = 0;
  Scalar l_diff = 0;
  // Sum of the enabled components.
  Scalar l_sspa = 0;
  bool diff_present = true;
  std::vector<Scalar> view_terms;
  std::vector<Scalar> diff_terms;
};

namespace detail {

// InfoNCE of (a, b) with optional row normalization; accumulates scaled
// gradients into ga, gb when they are non-null.
template <typename Scalar>
Scalar pair_term(const Matrix<Scalar>& a, const Matrix<Scalar>& b, bool normalize, Scalar scale,
                 Matrix<Scalar>* ga, Matrix<Scalar>* gb) {
  const Matrix<Scalar> ua = normalize ? scfrm::normalize_rows(a) : a;
  const Matrix<Scalar> ub = normalize ? scfrm::normalize_rows(b) : b;
  const Matrix<Scalar> s = semantic_similarity_matrix(ua, ub);
  if (ga == nullptr) return infonce_rowwise(s);
  Matrix<Scalar> gs;
  const Scalar value = infonce_rowwise(s, &gs);
  Matrix<Scalar> dua = gs * ub;
  Matrix<Scalar> dub = gs.transpose() * ua;
  if (normalize) {
    dua = normalize_rows_backward(a, dua);
    dub = normalize_rows_backward(b, dub);
  }
  *ga += scale * dua;
  *gb += scale * dub;
  return value;
}

}  // namespace detail

// Per-view cross-modal InfoNCE averaged over all I views, plus InfoNCE over
// consecutive-view differences averaged over the I-1 non-wrapping pairs.
// With `grad`, adds weight * dL_sspa/d(refined) into it.
template <typename Scalar>
AlignmentLossReport<Scalar> sspa_loss(const SampleFeatures<Scalar>& refined, const SspaOptions& opt = {},
                                      SampleFeatures<Scalar>* grad = nullptr, Scalar weight = Scalar(1),
                                      Warnings* warnings = nullptr) {
  const int num_views = refined.num_views();
  if (num_views < 1) throw UsageError("SSPA needs at least one view");
  AlignmentLossReport<Scalar> report;
  const Scalar view_scale = weight / static_cast<Scalar>(num_views);
  for (int i = 0; i < num_views; ++i) {
    const bool g = grad != nullptr && opt.use_view;
    const Scalar term = detail::pair_term(refined.at(i, Modality::k2D), refined.at(i, Modality::k3D), opt.normalize,
                                          view_scale, g ? &grad->at(i, Modality::k2D) : nullptr,
                                          g ? &grad->at(i, Modality::k3D) : nullptr);
    report.view_terms.push_back(term);
    report.l_view += term;
  }
  report.l_view /= static_cast<Scalar>(num_views);

  if (num_views < 2) {
    report.diff_present = false;
    warn(warnings, "L_diff undefined for a single view; treated as 0");
  } else {
    const Scalar diff_scale = weight / static_cast<Scalar>(num_views - 1);
    for (int i = 0; i + 1 < num_views; ++i) {
      const Matrix<Scalar> d2 = differential_features(refined.at(i + 1, Modality::k2D), refined.at(i, Modality::k2D));
      const Matrix<Scalar> d3 = differential_features(refined.at(i + 1, Modality::k3D), refined.at(i, Modality::k3D));
      const bool g = grad != nullptr && opt.use_diff;
      Matrix<Scalar> g2, g3;
      if (g) {
        g2 = Matrix<Scalar>::Zero(d2.rows(), d2.cols());
        g3 = Matrix<Scalar>::Zero(d3.rows(), d3.cols());
      }
      const Scalar term =
          detail::pair_term(d2, d3, opt.normalize, diff_scale, g ? &g2 : nullptr, g ? &g3 : nullptr);
      if (g) {
        grad->at(i + 1, Modality::k2D) += g2;
        grad->at(i, Modality::k2D) -= g2;
        grad->at(i + 1, Modality::k3D) += g3;
        grad->at(i, Modality::k3D) -= g3;
      }
      report.diff_terms.push_back(term);
      report.l_diff += term;
    }
    report.l_diff /= static_cast<Scalar>(num_views - 1);
  }
  report.l_sspa = (opt.use_view ? report.l_view : Scalar(0)) + (opt.use_diff ? report.l_diff : Scalar(0));
  return report;
}

}  // namespace sganet::sspa
