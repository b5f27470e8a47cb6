#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "cocycle.hpp"

namespace clab {

// Forward products M^n(x) and pullbacks P_n = M^n(T^{-n}x), n = 0..N, with the
// exterior log-norms at every n and (optionally) nested top singular subspaces.
struct Trajectory {
  int d = 0;
  long N = 0;
  std::vector<std::vector<double>> fwd, bwd;  // [n][i], i = 0..d
  // fwd_top[n][k]: top-k right singular subspace of M^n(x); bwd_top[n][k]: top-k left of P_n
  std::vector<std::vector<Subspace>> fwd_top, bwd_top;

  // log||Lambda^i M^n(x)|| for signed n
  double log_norm(int i, long n) const {
    if (n >= 0) return fwd[n][i];
    return bwd[-n][d - i] - bwd[-n][d];
  }
};

inline Trajectory trajectory(const CocycleTable& c, const PointWindow& w, long N, bool subspaces,
                             const std::vector<int>& ks = {}) {
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  Trajectory t;
  t.d = c.d;
  t.N = N;
  auto ids_f = matrix_ids(c, bank, w, 0, N, "trajectory");
  auto ids_b = matrix_ids(c, bank, w, -N, 0, "trajectory");
  for (int dir = 0; dir < 2; ++dir) {
    ExteriorAccumulator acc(bank, ext, c.d);
    auto& logs = dir == 0 ? t.fwd : t.bwd;
    auto& tops = dir == 0 ? t.fwd_top : t.bwd_top;
    logs.resize(N + 1);
    if (subspaces) tops.resize(N + 1);
    for (long n = 0; n <= N; ++n) {
      if (n > 0) {
        if (dir == 0) acc.push(ids_f[n - 1], true);
        else acc.push(ids_b[N - n], false);  // P_n = P_{n-1} M(T^{-n}x)
      }
      logs[n] = acc.log_norms();
      if (subspaces) {
        tops[n].resize(c.d + 1);
        for (int k : ks) tops[n][k] = acc.top_subspace(k, dir == 0);
      }
    }
  }
  return t;
}

struct PesinEntry {
  int i;     // 1-based index
  int sign;  // +1 or -1
  double value;
  long argmax;
};

struct PesinEvaluation {
  long horizon = 0;
  double eps = 0;
  std::vector<PesinEntry> per_index;
  double total = 0;
  int total_i = 1;
  long total_n = 0;
};

inline PesinEvaluation b_epsilon_from(const Trajectory& t, double eps, const std::vector<double>& lyap) {
  const int d = t.d;
  PesinEvaluation ev;
  ev.horizon = t.N;
  ev.eps = eps;
  ev.total = -std::numeric_limits<double>::infinity();
  for (int sign : {+1, -1})
    for (int i = 1; i <= d; ++i) {
      double rate = 0;
      for (int j = 0; j < i; ++j) rate += sign > 0 ? lyap[j] : lyap[d - 1 - j];
      PesinEntry e{i, sign, -std::numeric_limits<double>::infinity(), 0};
      for (long m = 0; m <= t.N; ++m) {
        long n = sign * m;
        double v = std::abs(t.log_norm(i, n) - double(n) * rate) - double(m) * eps;
        if (v > e.value) {
          e.value = v;
          e.argmax = n;
        }
      }
      ev.per_index.push_back(e);
      if (e.value > ev.total) {
        ev.total = e.value;
        ev.total_i = i;
        ev.total_n = e.argmax;
      }
    }
  return ev;
}

inline PesinEvaluation b_epsilon(const CocycleTable& c, const PointWindow& w, double eps,
                                 const std::vector<double>& lyap, long horizon) {
  if (!(eps > 0)) throw ConfigError("b_epsilon: eps must be > 0");
  if (int(lyap.size()) != c.d) throw ConfigError("b_epsilon: need one exponent per dimension");
  for (int i = 1; i < c.d; ++i)
    if (lyap[i] > lyap[i - 1]) throw ConfigError("b_epsilon: exponents must be nonincreasing");
  return b_epsilon_from(trajectory(c, w, horizon, false), eps, lyap);
}

struct OseledetsSpace {
  int index;  // 1-based first index of the block
  int dim;
  double lambda;
  Subspace space;
};

namespace detail {

// Orbits of E are evaluated in quad precision: the pulled-back line drifts by the
// exponent gap per step, so double rounding would be amplified to O(1) within a few dozen steps.
using Quad = boost::multiprecision::cpp_bin_float_quad;

struct QMat {
  int rows = 0, cols = 0;
  std::vector<Quad> a;
  QMat() = default;
  QMat(int r, int c) : rows(r), cols(c), a(std::size_t(r) * std::size_t(c), Quad(0)) {}
  explicit QMat(const Mat& m) : QMat(int(m.rows()), int(m.cols())) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) (*this)(i, j) = m(i, j);
  }
  Quad& operator()(int i, int j) { return a[std::size_t(i) * std::size_t(cols) + std::size_t(j)]; }
  const Quad& operator()(int i, int j) const { return a[std::size_t(i) * std::size_t(cols) + std::size_t(j)]; }
  Mat to_double() const {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = (*this)(i, j).convert_to<double>();
    return m;
  }
};

inline QMat operator*(const QMat& x, const QMat& y) {
  QMat z(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      if (x(i, k) == 0) continue;
      for (int j = 0; j < y.cols; ++j) z(i, j) += x(i, k) * y(k, j);
    }
  return z;
}

inline QMat quad_inverse(const Mat& m) {
  const int n = int(m.rows());
  QMat A(m), I(n, n);
  for (int i = 0; i < n; ++i) I(i, i) = 1;
  for (int c = 0; c < n; ++c) {
    int p = c;
    for (int r = c + 1; r < n; ++r)
      if (abs(A(r, c)) > abs(A(p, c))) p = r;
    if (A(p, c) == 0) throw NumericRefusal("a_epsilon", "singular generator");
    for (int j = 0; j < n; ++j) {
      std::swap(A(c, j), A(p, j));
      std::swap(I(c, j), I(p, j));
    }
    const Quad piv = A(c, c);
    for (int j = 0; j < n; ++j) {
      A(c, j) /= piv;
      I(c, j) /= piv;
    }
    for (int r = 0; r < n; ++r) {
      if (r == c || A(r, c) == 0) continue;
      const Quad f = A(r, c);
      for (int j = 0; j < n; ++j) {
        A(r, j) -= f * A(c, j);
        I(r, j) -= f * I(c, j);
      }
    }
  }
  return I;
}

// Thin QR by modified Gram-Schmidt with one reorthogonalization pass: W = Q R.
inline std::pair<QMat, QMat> quad_qr(const QMat& W) {
  const int d = W.rows, k = W.cols;
  QMat Q = W, R(k, k);
  for (int j = 0; j < k; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) {
        Quad dot = 0;
        for (int r = 0; r < d; ++r) dot += Q(r, i) * Q(r, j);
        for (int r = 0; r < d; ++r) Q(r, j) -= dot * Q(r, i);
        R(i, j) += dot;
      }
    Quad nrm = 0;
    for (int r = 0; r < d; ++r) nrm += Q(r, j) * Q(r, j);
    nrm = sqrt(nrm);
    if (nrm == 0) throw NumericRefusal("a_epsilon", "basis collapsed along the orbit");
    for (int r = 0; r < d; ++r) Q(r, j) /= nrm;
    R(j, j) = nrm;
  }
  return {Q, R};
}

// Propagate a basis B of E through M^n(x), n in [lo, hi] (lo <= 0 <= hi): M^n(x) B = Q_n e^{s_n} S_n.
struct BasisOrbit {
  long lo = 0;
  std::vector<Mat> S;  // index n - lo
  std::vector<double> scale;
};

inline BasisOrbit basis_orbit(const MatrixBank& bank, const std::vector<int>& ids_f, const std::vector<int>& ids_b,
                              const std::vector<QMat>& inverses, const Mat& B, long lo, long hi) {
  BasisOrbit o;
  o.lo = lo;
  o.S.assign(std::size_t(hi - lo + 1), Mat());
  o.scale.assign(std::size_t(hi - lo + 1), 0.0);
  auto [Q0, S0] = quad_qr(QMat(B));
  o.S[std::size_t(-lo)] = S0.to_double();
  std::vector<QMat> fwd(bank.mats.size());
  for (int dir : {+1, -1}) {
    QMat Q = Q0, S = S0;
    double sc = 0;
    const long steps = dir > 0 ? hi : -lo;
    for (long m = 1; m <= steps; ++m) {
      const int id = dir > 0 ? ids_f[std::size_t(m - 1)] : ids_b[std::size_t(-lo - m)];
      if (dir > 0 && fwd[std::size_t(id)].rows == 0) fwd[std::size_t(id)] = QMat(*bank.mats[std::size_t(id)]);
      auto [Qn, R] = quad_qr((dir > 0 ? fwd[std::size_t(id)] : inverses[std::size_t(id)]) * Q);
      Q = Qn;
      S = R * S;
      Quad f = 0;
      for (auto& v : S.a) f += v * v;
      f = sqrt(f);
      for (auto& v : S.a) v /= f;
      sc += log(f).convert_to<double>();
      o.S[std::size_t(dir * m - lo)] = S.to_double();
      o.scale[std::size_t(dir * m - lo)] = sc;
    }
  }
  return o;
}

}  // namespace detail

// log A_eps at T^t x, horizon N, for the transported spaces M^t(x) E where E is given at x.
inline double log_a_epsilon_shifted(const CocycleTable& c, const PointWindow& w, double eps,
                                    const std::vector<OseledetsSpace>& E, long t, long N, int workers = 1) {
  if (std::abs(t) > N) throw ConfigError("a_epsilon: shift must not exceed the horizon");
  const long lo = std::min(0L, t - N), hi = std::max(0L, t + N);
  MatrixBank bank(c);
  auto ids_f = matrix_ids(c, bank, w, 0, hi, "a_epsilon");
  auto ids_b = matrix_ids(c, bank, w, lo, 0, "a_epsilon");
  std::vector<detail::QMat> inv(bank.mats.size());
  for (int id : ids_b)
    if (inv[std::size_t(id)].rows == 0) inv[std::size_t(id)] = detail::quad_inverse(*bank.mats[std::size_t(id)]);
  double best = 0.0;  // m = n gives 1
  for (auto& e : E) {
    auto o = detail::basis_orbit(bank, ids_f, ids_b, inv, e.space.basis, lo, hi);
    auto idx = [&](long n) { return std::size_t(n + t - lo); };
    if (e.space.dim() == 1) {
      // ratio factorizes: max_n g(n) - min_m h(m)
      double gmax = -1e300, hmin = 1e300;
      for (long n = -N; n <= N; ++n) {
        double ln = o.scale[idx(n)] + std::log(std::abs(o.S[idx(n)](0, 0)));
        gmax = std::max(gmax, ln - n * e.lambda - std::abs(n) * eps / 2);
        hmin = std::min(hmin, ln - n * e.lambda + std::abs(n) * eps / 2);
      }
      best = std::max(best, gmax - hmin);
      continue;
    }
    std::vector<double> rowbest(std::size_t(2 * N + 1), -1e300);
    parallel_for(std::size_t(2 * N + 1), workers, [&](std::size_t a) {
      long m = long(a) - N;
      double rb = -1e300;
      for (long n = -N; n <= N; ++n) {
        double r = std::log(ratio_norm(o.S[idx(n)], o.S[idx(m)])) + o.scale[idx(n)] - o.scale[idx(m)];
        rb = std::max(rb, r - (n - m) * e.lambda - (std::abs(n) + std::abs(m)) * eps / 2);
      }
      rowbest[a] = rb;
    });
    for (double r : rowbest) best = std::max(best, r);
  }
  return best;
}

// log A_eps(x) at finite horizon.
inline double log_a_epsilon(const CocycleTable& c, const PointWindow& w, double eps,
                            const std::vector<OseledetsSpace>& E, long N, int workers = 1) {
  return log_a_epsilon_shifted(c, w, eps, E, 0, N, workers);
}

inline double a_epsilon(const CocycleTable& c, const PointWindow& w, double eps, const std::vector<OseledetsSpace>& E,
                        long N, int workers = 1) {
  return std::exp(log_a_epsilon(c, w, eps, E, N, workers));
}

// ---- deterministic reconstruction ----

struct CauchyRow {
  long n;
  int i;
  double distance;
};

struct OseledetsEstimate {
  double eps = 0, C = 0, rho = 0;
  long N1 = 0;
  long flags_horizon = 0;
  std::vector<OseledetsSpace> E;
  std::vector<std::pair<long, double>> angle_witnesses;  // per block with index > 1
  double D = 1;
  double K_hat = 0;
  double decay_rate = 0;
  std::vector<CauchyRow> diagnostics;
  PesinEvaluation B;
};

struct Refusal {
  std::string reason;
  int i = 0;
  long n = 0;
};

using OseledetsResult = std::variant<OseledetsEstimate, Refusal>;

// Blocks of equal exponents: 0-based first index and size.
inline std::vector<std::pair<int, int>> exponent_blocks(const std::vector<double>& lyap, double tol = 1e-9) {
  std::vector<std::pair<int, int>> b;
  for (int i = 0; i < int(lyap.size()); ++i) {
    if (i > 0 && lyap[i - 1] - lyap[i] <= tol) ++b.back().second;
    else b.push_back({i, 1});
  }
  return b;
}

inline double min_gap(const std::vector<double>& lyap) {
  auto b = exponent_blocks(lyap);
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < b.size(); ++k) g = std::min(g, lyap[b[k - 1].first] - lyap[b[k].first]);
  return g;
}

inline OseledetsResult deterministic_oseledets(const CocycleTable& c, const PointWindow& w, double eps, double C,
                                               double rho, long horizon, const std::vector<double>& lyap) {
  const int d = c.d;
  const auto blocks = exponent_blocks(lyap);
  const double gap = min_gap(lyap);
  if (blocks.size() > 1 && !(eps < gap / (20.0 * d)))
    return Refusal{"precondition: eps must be below min gap / (20 d)", 0, 0};
  std::vector<int> ks;
  for (auto [s, m] : blocks) {
    ks.push_back(s);
    ks.push_back(s + m);
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  Trajectory t = trajectory(c, w, horizon, true, ks);

  OseledetsEstimate est;
  est.eps = eps;
  est.C = C;
  est.rho = rho;
  est.flags_horizon = horizon;
  // (a)
  est.B = b_epsilon_from(t, eps, lyap);
  if (est.B.total > C) return Refusal{"B-bound violated", est.B.total_i, est.B.total_n};
  // (b)
  est.N1 = long(std::ceil(2.0 * C / eps));
  if (est.N1 < 1) est.N1 = 1;
  if (est.N1 > horizon) return Refusal{"Step-1 failure: N1 = " + std::to_string(est.N1) + " exceeds horizon", 0, est.N1};
  for (long m = est.N1; m <= horizon; ++m)
    for (int sgn : {1, -1})
      for (int i = 1; i <= d; ++i) {
        long n = sgn * m;
        // n < 0: singular exponents of the pullback, descending
        double li = sgn > 0 ? (t.fwd[m][i] - t.fwd[m][i - 1]) / double(m) : (t.bwd[m][i] - t.bwd[m][i - 1]) / double(m);
        if (std::abs(li - lyap[i - 1]) > 3 * eps) return Refusal{"block grouping ambiguous (Step 1)", i, n};
      }
  // F^{(m)}_{>=i} = complement of the top-(i-1) right subspace; F^{(-m)}_{<=i} = top left subspace
  auto F_ge = [&](long m, int s) { return orth_complement(t.fwd_top[m][s]); };
  auto F_le = [&](long m, int e) { return t.bwd_top[m][e]; };
  // (c)
  est.decay_rate = blocks.size() > 1 ? gap - 6.0 * (d - 1) * eps : 0.0;
  const double floor = 1e-12;
  const long mid = (est.N1 + horizon) / 2;
  double K = 0;
  for (auto [s, m] : blocks) {
    if (s == 0) continue;
    for (long n = est.N1; n < horizon; ++n) {
      double df = grassmann_distance(F_ge(n, s), F_ge(n + 1, s));
      est.diagnostics.push_back({n, s + 1, df});
      if (n <= mid) K = std::max(K, std::max(df - floor, 0.0) * std::exp(est.decay_rate * double(n)));
    }
  }
  for (auto [s, m] : blocks) {
    if (s + m == d) continue;
    for (long n = est.N1; n < horizon; ++n) {
      double db = grassmann_distance(F_le(n, s + m), F_le(n + 1, s + m));
      est.diagnostics.push_back({-n, s + m, db});
      if (n <= mid) K = std::max(K, std::max(db - floor, 0.0) * std::exp(est.decay_rate * double(n)));
    }
  }
  est.K_hat = K;
  for (auto& r : est.diagnostics) {
    long n = std::abs(r.n);
    if (n > mid && r.distance > K * std::exp(-est.decay_rate * double(n)) + floor)
      return Refusal{"Cauchy decay violated", r.i, r.n};
  }
  // (d)
  for (auto [s, m] : blocks) {
    if (s == 0) continue;
    bool found = false;
    for (long mm = est.N1; mm <= horizon && !found; ++mm) {
      double ang = min_principal_angle(F_ge(mm, s), t.bwd_top[mm][s]);
      if (ang >= rho) {
        est.angle_witnesses.push_back({mm, ang});
        found = true;
      }
    }
    if (!found) return Refusal{"angle witness absent", s + 1, 0};
  }
  // (e)
  double wit = M_PI / 2;
  for (auto& a : est.angle_witnesses) wit = std::min(wit, a.second);
  const double tol = 1e-8 / std::sin(wit);
  for (auto [s, m] : blocks) {
    Subspace e = intersect(F_ge(horizon, s), F_le(horizon, s + m), tol);
    if (e.dim() != m) return Refusal{"intersection dimension mismatch", s + 1, horizon};
    est.E.push_back({s + 1, m, lyap[s], e});
  }
  // (f)
  est.D = a_epsilon(c, w, 20.0 * d * eps, est.E, horizon);
  return est;
}

// Oseledets spaces from the flags at the horizon alone (no B-bound or
// precondition gate); empty when an intersection has the wrong dimension.
inline std::optional<std::vector<OseledetsSpace>> flag_oseledets(const CocycleTable& c, const PointWindow& w,
                                                                 const std::vector<double>& lyap, long horizon) {
  const auto blocks = exponent_blocks(lyap);
  std::vector<int> ks;
  for (auto [s, m] : blocks) {
    ks.push_back(s);
    ks.push_back(s + m);
  }
  Trajectory t = trajectory(c, w, horizon, true, ks);
  std::vector<OseledetsSpace> E;
  for (auto [s, m] : blocks) {
    Subspace ge = orth_complement(t.fwd_top[horizon][s]);
    double ang = s == 0 ? M_PI / 2 : min_principal_angle(ge, t.bwd_top[horizon][s]);
    if (!(ang > 0)) return std::nullopt;
    Subspace e = intersect(ge, t.bwd_top[horizon][s + m], 1e-8 / std::sin(ang));
    if (e.dim() != m) return std::nullopt;
    E.push_back({s + 1, m, lyap[s], e});
  }
  return E;
}

// Truncated A_eps at x with flag-derived Oseledets spaces; +inf when they cannot be formed.
inline double pesin_value(const CocycleTable& c, const PointWindow& w, const std::vector<double>& lyap, double eps,
                          long horizon) {
  auto E = flag_oseledets(c, w, lyap, horizon);
  if (!E) return std::numeric_limits<double>::infinity();
  try {
    return a_epsilon(c, w, eps, *E, horizon);
  } catch (const NumericRefusal&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Largest violation (in log units, <= 0 means inside) of
// K4^{-1} e^{k lambda_i - 6 d eps |k|} <= |M^k v| <= K4 e^{k lambda_i + 6 d eps |k|}, K4 = sqrt(D),
// over |k| <= N and the basis vectors of each E_i.
inline double step6_violation(const CocycleTable& c, const PointWindow& w, const OseledetsEstimate& est, long N) {
  MatrixBank bank(c);
  auto ids_f = matrix_ids(c, bank, w, 0, N, "step6");
  auto ids_b = matrix_ids(c, bank, w, -N, 0, "step6");
  std::vector<Mat> inv(bank.mats.size());
  for (std::size_t id = 0; id < bank.mats.size(); ++id)
    if (bank.mats[id]->size()) inv[id] = bank.mats[id]->inverse();
  const double logK4 = 0.5 * std::log(est.D);
  const int d = c.d;
  double worst = -1e300;
  for (auto& e : est.E)
    for (int col = 0; col < e.dim; ++col) {
      Vec v0 = e.space.basis.col(col);
      for (int dir : {1, -1}) {
        Vec v = v0;
        double lg = 0;
        for (long m = 1; m <= N; ++m) {
          int id = dir > 0 ? ids_f[m - 1] : ids_b[N - m];
          v = (dir > 0 ? *bank.mats[id] : inv[id]) * v;
          double f = v.norm();
          v /= f;
          lg += std::log(f);
          long k = dir * m;
          double center = k * e.lambda, slack = 6.0 * d * est.eps * double(m) + logK4;
          worst = std::max(worst, std::abs(lg - center) - slack);
        }
      }
    }
  return worst;
}

// Direction of lim_k M^k(T^{-k}x) v applied from the far past.
inline Subspace pullback_direction(const CocycleTable& c, const PointWindow& w, long k, const Vec& seed) {
  MatrixBank bank(c);
  auto ids = matrix_ids(c, bank, w, -k, 0, "pullback");
  Vec v = seed.normalized();
  for (int id : ids) {
    v = *bank.mats[id] * v;
    v.normalize();
  }
  return {v};
}

}  // namespace clab
