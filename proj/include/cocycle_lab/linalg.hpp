#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"

namespace clab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr int kMaxDim = 8;

struct SVD {
  Mat left;
  Vec s;
  Mat right;
};

inline SVD svd(const Mat& a) {
  Eigen::JacobiSVD<Mat> j(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {j.matrixU(), j.singularValues(), j.matrixV()};
}

inline Vec singular_values(const Mat& a) { return Eigen::JacobiSVD<Mat>(a).singularValues(); }

inline double op_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  if (a.size() == 1) return std::abs(a(0, 0));
  return singular_values(a)(0);
}

// Lexicographically ordered i-subsets of {0..d-1}.
inline std::vector<std::vector<int>> subsets(int d, int i) {
  std::vector<std::vector<int>> out;
  std::vector<int> c(i);
  for (int k = 0; k < i; ++k) c[k] = k;
  if (i == 0) return {{}};
  while (true) {
    out.push_back(c);
    int k = i - 1;
    while (k >= 0 && c[k] == d - i + k) --k;
    if (k < 0) break;
    ++c[k];
    for (int m = k + 1; m < i; ++m) c[m] = c[m - 1] + 1;
  }
  return out;
}

inline Mat exterior_power(const Mat& a, int i) {
  const int d = int(a.rows());
  if (i < 1 || i > d) throw ConfigError("exterior_power: need 1 <= i <= d");
  if (i == 1) return a;
  auto idx = subsets(d, i);
  const int m = int(idx.size());
  Mat out(m, m);
  Mat sub(i, i);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      for (int p = 0; p < i; ++p)
        for (int q = 0; q < i; ++q) sub(p, q) = a(idx[r][p], idx[c][q]);
      out(r, c) = sub.determinant();
    }
  return out;
}

struct Subspace {
  Mat basis;  // d x k, orthonormal columns
  int dim() const { return int(basis.cols()); }
  int ambient() const { return int(basis.rows()); }
};

// Orthonormal basis of the column span (columns assumed independent).
inline Subspace span_of(const Mat& cols) {
  if (cols.cols() == 0) return {Mat(cols.rows(), 0)};
  Eigen::HouseholderQR<Mat> qr(cols);
  Mat q = qr.householderQ() * Mat::Identity(cols.rows(), cols.cols());
  return {q};
}

inline Subspace axis_span(int d, std::vector<int> axes) {
  Mat b = Mat::Zero(d, int(axes.size()));
  for (int k = 0; k < int(axes.size()); ++k) b(axes[k], k) = 1.0;
  return {b};
}

inline Mat projector(const Subspace& u) { return u.basis * u.basis.transpose(); }

inline Subspace orth_complement(const Subspace& u) {
  const int d = u.ambient();
  if (u.dim() == 0) return {Mat::Identity(d, d)};
  SVD s = svd(u.basis);
  return {s.left.rightCols(d - u.dim())};
}

inline double grassmann_distance(const Subspace& u, const Subspace& v) {
  if (u.dim() != v.dim() || u.ambient() != v.ambient())
    throw ConfigError("grassmann_distance: dimension mismatch");
  if (u.dim() == 0) return 0.0;
  Mat p = u.basis - v.basis * (v.basis.transpose() * u.basis);
  return std::clamp(op_norm(p), 0.0, 1.0);
}

inline double min_principal_angle(const Subspace& u, const Subspace& v) {
  if (u.dim() == 0 || v.dim() == 0) return M_PI / 2;
  double c = op_norm(u.basis.transpose() * v.basis);
  return std::acos(std::clamp(c, 0.0, 1.0));
}

inline Subspace intersect(const Subspace& u, const Subspace& v, double tol) {
  const int d = u.ambient();
  Mat stack(2 * d, d);
  stack.topRows(d) = Mat::Identity(d, d) - projector(u);
  stack.bottomRows(d) = Mat::Identity(d, d) - projector(v);
  Eigen::JacobiSVD<Mat> j(stack, Eigen::ComputeFullV);
  const Vec& s = j.singularValues();
  int k = 0;
  for (int i = 0; i < d; ++i)
    if (s(i) < tol) ++k;
  return {j.matrixV().rightCols(k)};
}

// sup_c |P c| / |Q c| = |P R^{-1}| with Q = W R.
inline double ratio_norm(const Mat& p, const Mat& q) {
  const int k = int(q.cols());
  if (k == 0) return 1.0;
  Eigen::HouseholderQR<Mat> qr(q);
  Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  double rmax = r.diagonal().cwiseAbs().maxCoeff();
  double rmin = r.diagonal().cwiseAbs().minCoeff();
  if (!(rmin > 1e-14 * rmax) || rmax == 0.0) throw NumericRefusal("ratio_norm", "rank-deficient denominator");
  Mat x = r.transpose().triangularView<Eigen::Lower>().solve(p.transpose());
  return op_norm(x.transpose());
}

// Product represented as e^{log_scale} * unit.
struct ScaledMatrix {
  Mat unit;
  double log_scale = 0.0;

  static ScaledMatrix identity(int d) { return {Mat::Identity(d, d), 0.0}; }
  Mat dense() const { return unit * std::exp(log_scale); }
  double log_norm() const { return log_scale + std::log(op_norm(unit)); }

  void renormalize() {
    double nrm = op_norm(unit);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) throw NumericRefusal("ScaledMatrix", "degenerate product");
    unit /= nrm;
    log_scale += std::log(nrm);
  }
  ScaledMatrix inverse() const {
    ScaledMatrix out{unit.inverse(), -log_scale};
    out.renormalize();
    return out;
  }
};

inline ScaledMatrix operator*(const ScaledMatrix& a, const ScaledMatrix& b) {
  ScaledMatrix out{a.unit * b.unit, a.log_scale + b.log_scale};
  out.renormalize();
  return out;
}

// Top-k subspace from a decomposable k-vector (coordinates in lex subset basis):
// interior products with (k-1)-subsets give vectors spanning the subspace.
inline Subspace subspace_from_kvector(const Vec& w, int d, int k) {
  if (k == 0) return {Mat(d, 0)};
  if (k == d) return {Mat::Identity(d, d)};
  if (k == 1) return {w.normalized()};
  auto ks = subsets(d, k);
  auto js = subsets(d, k - 1);
  Mat u = Mat::Zero(d, int(js.size()));
  for (int a = 0; a < int(ks.size()); ++a) {
    const auto& s = ks[a];
    // w_S e_S contracted by e_J for J subset of S leaves +-w_S e_j, j = S \ J
    for (int drop = 0; drop < k; ++drop) {
      std::vector<int> jset;
      for (int t = 0; t < k; ++t)
        if (t != drop) jset.push_back(s[t]);
      int jcol = int(std::lower_bound(js.begin(), js.end(), jset) - js.begin());
      double sign = ((k - 1 - drop) % 2 == 0) ? 1.0 : -1.0;
      u(s[drop], jcol) += sign * w(a);
    }
  }
  Eigen::JacobiSVD<Mat> j(u, Eigen::ComputeFullU);
  return {j.matrixU().leftCols(k)};
}

}  // namespace clab
