#pragma once
#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "cocycle.hpp"

namespace clab {

struct BunchingMargin {
  double margin = 0;  // max over k-windows of |M^k| |(M^k)^{-1}| theta^{nu k} at the best k
  int k = 1;
  bool bunched = false;
  std::vector<double> per_k;  // index k-1
};

// margin(k) is submultiplicative; the best k minimizes margin(k)^{1/k}, ties to the smaller k.
inline BunchingMargin bunching_margin(const CocycleTable& c, double theta, double nu, int k_max,
                                      std::uint64_t cap = size_cap()) {
  if (k_max < 1) throw ConfigError("bunching_margin: k_max must be >= 1");
  if (!(theta > 0 && theta < 1) || !(nu > 0)) throw ConfigError("bunching_margin: need theta in (0,1), nu > 0");
  MatrixBank bank(c);
  BunchingMargin out;
  double best_rate = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_max; ++k) {
    const long L = k + c.reach_left() + c.reach_right();
    double m = 0;
    for (auto& word : enumerate_words(c.spec, int(L), cap)) {
      PointWindow w{-c.reach_left(), word};
      Mat P = product_of_ids(bank, matrix_ids(c, bank, w, 0, k, "bunching_margin"), c.d).dense();
      Vec s = singular_values(P);
      m = std::max(m, s(0) / s(c.d - 1));
    }
    m *= std::pow(theta, nu * k);
    out.per_k.push_back(m);
    double rate = std::pow(m, 1.0 / k);
    if (rate < best_rate * (1 - 1e-12)) {
      best_rate = rate;
      out.margin = m;
      out.k = k;
    }
  }
  out.bunched = out.margin < 1;
  return out;
}

struct HolonomyResult {
  Mat matrix;
  long truncation_n = 0;
  double residual = 0;
  bool converged = false;
};

using HolonomyProvider = std::function<Mat(const PointWindow&, const PointWindow&)>;

namespace detail {

inline HolonomyResult holonomy_limit(const CocycleTable& c, const PointWindow& x, const PointWindow& y, long n_max,
                                     double tol, bool stable) {
  if (n_max < 1) throw ConfigError("holonomy: n_max must be >= 1");
  MatrixBank bank(c);
  auto ids_x = stable ? matrix_ids(c, bank, x, 0, n_max, "holonomy") : matrix_ids(c, bank, x, -n_max, 0, "holonomy");
  auto ids_y = stable ? matrix_ids(c, bank, y, 0, n_max, "holonomy") : matrix_ids(c, bank, y, -n_max, 0, "holonomy");
  const int d = c.d;
  // stable: H_n = M^n(y)^{-1} M^n(x); unstable: H_n = M^n(T^{-n}y) M^n(T^{-n}x)^{-1}
  Mat Px = Mat::Identity(d, d), Py = Mat::Identity(d, d);
  double sx = 0, sy = 0;
  HolonomyResult r;
  r.matrix = Mat::Identity(d, d);
  double prev_res = 0;
  int growing = 0;
  for (long n = 1; n <= n_max; ++n) {
    const int ix = ids_x[stable ? n - 1 : n_max - n], iy = ids_y[stable ? n - 1 : n_max - n];
    const Mat& Mx = *bank.mats[ix];
    const Mat& My = *bank.mats[iy];
    if (stable) {
      Px = Mx * Px;
      Py = My * Py;
    } else {
      Px = Px * Mx;
      Py = Py * My;
    }
    double fx = Px.norm(), fy = Py.norm();
    Px /= fx;
    Py /= fy;
    sx += std::log(fx);
    sy += std::log(fy);
    r.truncation_n = n;
    if (ix == iy) {
      // the same generator on both sides leaves H unchanged
      r.residual = 0;
      r.converged = true;
      return r;
    }
    Mat H = stable ? Mat(Py.partialPivLu().solve(Px)) : Mat(Px.transpose().partialPivLu().solve(Py.transpose()).transpose());
    H *= std::exp(stable ? sx - sy : sy - sx);
    double res = op_norm(H - r.matrix);
    r.matrix = H;
    r.truncation_n = n;
    r.residual = res;
    if (res <= tol) {
      r.converged = true;
      return r;
    }
    growing = (n > 1 && res > prev_res) ? growing + 1 : 0;
    if (growing >= 5) throw NumericRefusal("holonomy", "divergence detected (residual growing for 5 steps)");
    prev_res = res;
  }
  return r;
}

}  // namespace detail

inline HolonomyResult stable_holonomy(const CocycleTable& c, const PointWindow& x, const PointWindow& y, long n_max,
                                      double tol) {
  for (long i = std::max(x.first(), y.first()); i <= std::min(x.last(), y.last()); ++i)
    if (i >= 0 && x.at(i) != y.at(i)) throw ConfigError("stable_holonomy: x and y differ at coordinate " + std::to_string(i));
  return detail::holonomy_limit(c, x, y, n_max, tol, true);
}

inline HolonomyResult unstable_holonomy(const CocycleTable& c, const PointWindow& x, const PointWindow& y, long n_max,
                                        double tol) {
  for (long i = std::max(x.first(), y.first()); i <= std::min(x.last(), y.last()); ++i)
    if (i < 0 && x.at(i) != y.at(i)) throw ConfigError("unstable_holonomy: x and y differ at coordinate " + std::to_string(i));
  return detail::holonomy_limit(c, x, y, n_max, tol, false);
}

inline HolonomyProvider limit_provider(const CocycleTable& c, long n_max, double tol, bool stable) {
  return [c, n_max, tol, stable](const PointWindow& x, const PointWindow& y) {
    auto r = stable ? stable_holonomy(c, x, y, n_max, tol) : unstable_holonomy(c, x, y, n_max, tol);
    if (!r.converged) throw NumericRefusal("holonomy", "truncation not converged at n_max = " + std::to_string(n_max));
    return r.matrix;
  };
}

// Explicit holonomies of the constant diag(3,2,1) cocycle. terms < 0 sums over every
// coordinate both windows cover; otherwise over the first `terms` coordinates.
inline Mat remark39_unstable(const PointWindow& x, const PointWindow& y, long terms = -1) {
  long hi = std::min(x.last(), y.last());
  if (terms >= 0) hi = std::min(hi, terms - 1);
  long double a = 0, b = 0;
  for (long n = hi; n >= 0; --n) {
    long double dv = (long double)y.at(n) - (long double)x.at(n);
    a += std::pow(3.0L, -n) * dv;
    b += std::pow(2.0L, -n) * dv;
  }
  Mat H = Mat::Identity(3, 3);
  H(0, 2) = double(a);
  H(1, 2) = double(b);
  return H;
}

inline Mat remark39_stable(const PointWindow& x, const PointWindow& y, long terms = -1) {
  long lo = std::max(x.first(), y.first());
  if (terms >= 0) lo = std::max(lo, -(terms - 1));
  long double a = 0, b = 0;
  for (long n = lo; n <= 0; ++n) {
    long double dv = (long double)y.at(n) - (long double)x.at(n);
    a += std::pow(3.0L, n) * dv;
    b += std::pow(2.0L, n) * dv;
  }
  Mat H = Mat::Identity(3, 3);
  H(2, 0) = double(a);
  H(2, 1) = double(b);
  return H;
}

inline HolonomyProvider remark39_provider(bool stable, long terms = -1) {
  if (stable) return [terms](const PointWindow& x, const PointWindow& y) { return remark39_stable(x, y, terms); };
  return [terms](const PointWindow& x, const PointWindow& y) { return remark39_unstable(x, y, terms); };
}

inline HolonomyProvider identity_provider(int d) {
  return [d](const PointWindow&, const PointWindow&) { return Mat(Mat::Identity(d, d)); };
}

// max over pairs of |M(y) H_{x->y} - H_{Tx->Ty} M(x)|
inline double equivariance_residual(const CocycleTable& c, const HolonomyProvider& h,
                                    const std::vector<std::pair<PointWindow, PointWindow>>& pairs) {
  double worst = 0;
  for (auto& [x, y] : pairs) {
    Mat lhs = generator_at(c, y, 0) * h(x, y);
    Mat rhs = h(shift_window(x, 1), shift_window(y, 1)) * generator_at(c, x, 0);
    worst = std::max(worst, op_norm(lhs - rhs));
  }
  return worst;
}

struct TwistingCheck {
  std::vector<int> U, V;  // eigenvalue indices (descending order)
  double sigma_min = 0;
  bool pass = false;
};

struct PinchingTwistingReport {
  int period = 0;
  std::vector<std::complex<double>> eigenvalues;
  bool pinching = false;
  long homoclinic_length = 0;
  Mat psi;
  std::vector<TwistingCheck> twisting_checks;
  bool verdict = false;
};

// q: the periodic point with `splice` written at coordinates 0..L-1.
inline PointWindow homoclinic_point(const Word& p, const Word& splice, long a, long b) {
  PointWindow q = periodic_window(p, a, b);
  for (long n = 0; n < long(splice.size()); ++n)
    if (q.covers(n, n)) q.symbols[std::size_t(n - a)] = splice[std::size_t(n)];
  return q;
}

inline PinchingTwistingReport pinching_twisting_check(const CocycleTable& c, const HolonomyProvider& hs,
                                                      const HolonomyProvider& hu, const Word& p_word,
                                                      const Word& splice, double tol, long margin = 64) {
  const int d = c.d;
  const long k = long(p_word.size());
  if (k < 1) throw ConfigError("pinching_twisting_check: empty periodic word");
  if (!c.spec.admissible(p_word) || !c.spec.allowed(p_word.back(), p_word.front()))
    throw ConfigError("pinching_twisting_check: periodic word is not admissible as a cycle");
  PinchingTwistingReport r;
  r.period = int(k);
  const long L = long(splice.size());
  r.homoclinic_length = ((L + k - 1) / k) * k;
  if (r.homoclinic_length == 0) r.homoclinic_length = k;
  const long i = r.homoclinic_length;
  const long a = -margin - c.reach_left(), b = i + margin + c.reach_right();
  PointWindow p = periodic_window(p_word, a, b);
  PointWindow q = homoclinic_point(p_word, splice, a, b);
  if (!c.spec.admissible(q.symbols)) throw ConfigError("pinching_twisting_check: inadmissible q_route");

  Mat Mk = product(c, p, k).dense();
  Eigen::EigenSolver<Mat> es(Mk);
  std::vector<int> order(d);
  for (int j = 0; j < d; ++j) order[j] = j;
  auto ev = es.eigenvalues();
  std::sort(order.begin(), order.end(), [&](int u, int v) { return std::abs(ev(u)) > std::abs(ev(v)); });
  for (int j : order) r.eigenvalues.push_back(ev(j));
  r.pinching = true;
  for (int j = 0; j < d; ++j) {
    auto z = r.eigenvalues[j];
    if (std::abs(z.imag()) > tol * std::max(1.0, std::abs(z))) r.pinching = false;
    for (int m = 0; m < j; ++m) {
      double gap = std::abs(z - r.eigenvalues[m]) / std::max(std::abs(z), std::abs(r.eigenvalues[m]));
      if (!(gap > tol)) r.pinching = false;
    }
  }
  if (!r.pinching) return r;

  std::vector<Vec> eig(d);
  for (int j = 0; j < d; ++j) eig[j] = es.eigenvectors().col(order[j]).real().normalized();
  Mat Mi = product(c, q, i).dense();
  r.psi = hs(shift_window(q, i), p) * Mi * hu(p, q);

  auto basis = [&](const std::vector<int>& idx, bool apply) {
    Mat B(d, int(idx.size()));
    for (int t = 0; t < int(idx.size()); ++t) B.col(t) = eig[idx[t]];
    return span_of(apply ? Mat(r.psi * B) : B).basis;
  };
  for (int mu = 1; mu < (1 << d) - 1; ++mu)
    for (int mv = 1; mv < (1 << d) - 1; ++mv) {
      if (__builtin_popcount(unsigned(mu)) + __builtin_popcount(unsigned(mv)) != d) continue;
      TwistingCheck t;
      for (int j = 0; j < d; ++j) {
        if (mu >> j & 1) t.U.push_back(j);
        if (mv >> j & 1) t.V.push_back(j);
      }
      Mat cat(d, d);
      cat << basis(t.U, true), basis(t.V, false);
      Vec s = singular_values(cat);
      t.sigma_min = s(d - 1);
      t.pass = t.sigma_min > tol;
      r.twisting_checks.push_back(t);
    }
  r.verdict = true;
  for (auto& t : r.twisting_checks) r.verdict = r.verdict && t.pass;
  return r;
}

}  // namespace clab
