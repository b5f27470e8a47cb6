#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "cocycle.hpp"

namespace clab {

// ---- exchange paths ----

struct ExchangePath {
  std::vector<Mat> steps;  // Q_0 .. Q_{k-1}, all equal to exp(log(G)/k)
  Mat target;              // G, det 1
  int min_k = 0;
  double max_step_distance = 0;
  double product_residual = 0;  // ||Q^k - G|| / ||G||
};

namespace detail {

inline Mat quarter_turn() {
  Mat j(2, 2);
  j << 0, -1, 1, 0;
  return j;
}

inline double distance_to_identity(const Mat& q) { return op_norm(q - Mat::Identity(q.rows(), q.cols())); }

// G = F_out J F_in^{-1} normalized into SL(2); the column signs of a frame are free, so a
// negative determinant flips v_s at the exit.
inline Mat exchange_target(const Mat& frame_in, const Mat& frame_out) {
  if (frame_in.rows() != 2 || frame_in.cols() != 2 || frame_out.rows() != 2 || frame_out.cols() != 2)
    throw ConfigError("exchange_path: frames must be 2x2 (columns v_u, v_s)");
  if (std::abs(frame_in.determinant()) <= 1e-12 || std::abs(frame_out.determinant()) <= 1e-12)
    throw ConfigError("exchange_path: frame vectors are not independent");
  Mat out = frame_out;
  Mat g = out * quarter_turn() * frame_in.inverse();
  if (g.determinant() < 0) {
    out.col(1) = -out.col(1);
    g = out * quarter_turn() * frame_in.inverse();
  }
  return g / std::sqrt(g.determinant());
}

// log G for G in SL(2) with trace > -2 (otherwise -G, which acts the same on lines)
inline Mat real_log(Mat& g) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (g.trace() > -2.0) {
      Mat l = g.log();
      if (l.allFinite() && (l.exp() - g).norm() <= 1e-10 * std::max(1.0, g.norm())) return l;
    }
    g = -g;
  }
  throw NumericRefusal("exchange_path", "target outside the real-logarithm domain for both sign choices");
}

inline int minimal_k_for(const Mat& log_g, double eps) {
  const double nl = op_norm(log_g);
  // ||exp(L/k) - I|| <= e^{||L||/k} - 1, so this k always works
  const int k_safe = int(std::ceil(nl / std::log1p(eps))) + 1;
  for (int k = 1; k < k_safe; ++k)
    if (distance_to_identity((log_g / double(k)).exp()) <= eps) return k;
  return k_safe;
}

}  // namespace detail

inline int minimal_exchange_k(const Mat& frame_in, const Mat& frame_out, double eps) {
  if (!(eps > 0)) throw ConfigError("exchange_path: eps must be positive");
  Mat g = detail::exchange_target(frame_in, frame_out);
  return detail::minimal_k_for(detail::real_log(g), eps);
}

// Q_{k-1} ... Q_0 sends the line of v_u at entry to the line of v_s at exit and v_s to v_u.
inline ExchangePath exchange_path(const Mat& frame_in, const Mat& frame_out, int k, double eps) {
  if (!(eps > 0)) throw ConfigError("exchange_path: eps must be positive");
  if (k < 1) throw ConfigError("exchange_path: k must be >= 1");
  ExchangePath p;
  p.target = detail::exchange_target(frame_in, frame_out);
  Mat l = detail::real_log(p.target);
  p.min_k = detail::minimal_k_for(l, eps);
  if (k < p.min_k)
    throw NumericRefusal("exchange_path", "k too small for eps: minimal k is " + std::to_string(p.min_k));
  Mat q = (l / double(k)).exp();
  p.steps.assign(std::size_t(k), q);
  p.max_step_distance = detail::distance_to_identity(q);
  Mat acc = Mat::Identity(2, 2);
  for (auto& s : p.steps) acc = s * acc;
  p.product_residual = (acc - p.target).norm() / p.target.norm();
  if (p.product_residual > 1e-10) throw NumericRefusal("exchange_path", "product does not reproduce the target");
  return p;
}

// ---- line fields ----

struct Plant {
  long at = 0;
  Word word;
};

// A named point family for line-field probes: Gibbs samples with words overwritten.
struct LineFieldProbe {
  std::string label;
  std::vector<Plant> plants;
};

struct LineFieldSample {
  std::string label;
  Vec eu, es;
  double spread = 0;        // vs a point agreeing only on [-range, range]
  double equivariance = 0;  // max over u, s of dist(M(x)E(x), E(Tx))
};

struct LineFields {
  long range = 0, pullback = 0;
  std::vector<LineFieldSample> samples;
  double spread = 0, equivariance = 0;

  const LineFieldSample* find(const std::string& label) const {
    for (auto& s : samples)
      if (s.label == label) return &s;
    return nullptr;
  }
};

namespace detail {

// sin of the angle between two lines
inline double line_distance(const Vec& a, const Vec& b) {
  Vec u = a.normalized(), v = b.normalized();
  return (u - u.dot(v) * v).norm();
}

inline Vec generic_vector(int d, int which) {
  Vec v(d);
  for (int j = 0; j < d; ++j) v(j) = which == 0 ? 1.0 + 0.6180339887498949 * j : 1.0 - 0.41421356237309503 * j;
  return v.normalized();
}

// E^u(T^at x): direction of M^P(T^{at-P} x) v
inline Vec pull_unstable(const CocycleTable& c, const MatrixBank& bank, const PointWindow& x, long at, long P,
                         int which) {
  Vec v = generic_vector(c.d, which);
  for (int id : collapse_runs(bank, matrix_ids(c, bank, x, at - P, at, "recover_line_fields"))) {
    if (bank.identity[std::size_t(id)]) continue;
    v = *bank.mats[std::size_t(id)] * v;
    v.normalize();
  }
  return v;
}

// E^s(T^at x): direction of M^P(T^at x)^{-1} v
inline Vec pull_stable(const CocycleTable& c, const MatrixBank& bank, const PointWindow& x, long at, long P,
                       int which) {
  Vec v = generic_vector(c.d, which);
  auto ids = collapse_runs(bank, matrix_ids(c, bank, x, at, at + P, "recover_line_fields"));
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    if (bank.identity[std::size_t(*it)]) continue;
    v = bank.mats[std::size_t(*it)]->partialPivLu().solve(v);
    v.normalize();
  }
  return v;
}

inline void apply_plants(PointWindow& x, const std::vector<Plant>& plants) {
  for (auto& p : plants)
    for (std::size_t j = 0; j < p.word.size(); ++j) x.symbols[std::size_t(p.at + long(j) - x.start)] = p.word[j];
}

inline bool admissible_window(const SubshiftSpec& s, const PointWindow& x) {
  for (std::size_t j = 1; j < x.symbols.size(); ++j)
    if (!s.allowed(x.symbols[j - 1], x.symbols[j])) return false;
  return true;
}

}  // namespace detail

// Line fields on probe points plus `random_samples` plain Gibbs points. Every point is
// paired with a second one sharing only the coordinates in [-range, range]; the fields
// are declared locally constant at that range if the two agree within tol.
inline LineFields recover_line_fields(const CocycleTable& c, const GibbsModel& g, long window_range, double tol,
                                      const std::vector<LineFieldProbe>& probes, long random_samples,
                                      std::uint64_t seed, long pullback = 0, int workers = 1) {
  if (c.d < 2) throw ConfigError("recover_line_fields: dimension must be >= 2");
  if (window_range < 0 || random_samples < 0) throw ConfigError("recover_line_fields: negative range or samples");
  LineFields out;
  out.range = window_range;
  out.pullback = pullback > 0 ? pullback : window_range + 4096;
  const long P = out.pullback, reach = std::max(c.reach_left(), c.reach_right());
  const long half = P + reach + 1;
  for (auto& pr : probes)
    for (auto& p : pr.plants)
      if (p.at < -window_range || p.at + long(p.word.size()) - 1 > window_range)
        throw ConfigError("recover_line_fields: plant outside [-range, range] in probe " + pr.label);
  const std::size_t total = probes.size() + std::size_t(random_samples);
  out.samples.resize(total);
  MatrixBank bank(c);
  parallel_for(total, workers, [&](std::size_t idx) {
    auto& smp = out.samples[idx];
    const std::vector<Plant> none;
    const auto& plants = idx < probes.size() ? probes[idx].plants : none;
    smp.label = idx < probes.size() ? probes[idx].label : "random " + std::to_string(idx - probes.size());
    Stream rng = derive_stream(seed, idx);
    PointWindow x = sample_two_sided(g, rng, half, half);
    detail::apply_plants(x, plants);
    if (!detail::admissible_window(c.spec, x))
      throw ConfigError("recover_line_fields: planted words inadmissible in probe " + smp.label);
    PointWindow y;
    for (std::uint64_t attempt = 1;; ++attempt) {
      if (attempt > 64) throw NumericRefusal("recover_line_fields", "no admissible variant for " + smp.label);
      Stream r2 = derive_stream(rng, attempt);
      y = sample_two_sided(g, r2, half, half);
      for (long j = -window_range; j <= window_range; ++j) y.symbols[std::size_t(j - y.start)] = x.at(j);
      if (detail::admissible_window(c.spec, y)) break;
    }
    smp.eu = detail::pull_unstable(c, bank, x, 0, P, 0);
    smp.es = detail::pull_stable(c, bank, x, 0, P, 0);
    smp.spread = std::max(detail::line_distance(smp.eu, detail::pull_unstable(c, bank, y, 0, P, 0)),
                          detail::line_distance(smp.es, detail::pull_stable(c, bank, y, 0, P, 0)));
    const Mat& m = *bank.mats[std::size_t(matrix_ids(c, bank, x, 0, 1)[0])];
    smp.equivariance = std::max(detail::line_distance(m * smp.eu, detail::pull_unstable(c, bank, x, 1, P, 1)),
                                detail::line_distance(m * smp.es, detail::pull_stable(c, bank, x, 1, P, 1)));
  });
  for (auto& s : out.samples) {
    if (!(s.spread <= tol))
      throw NumericRefusal("recover_line_fields", "fields not locally constant at range " +
                                                      std::to_string(window_range) + ": point '" + s.label +
                                                      "' and its variant differ by " + std::to_string(s.spread));
    if (!(s.equivariance <= tol))
      throw NumericRefusal("recover_line_fields", "equivariance residual " + std::to_string(s.equivariance) +
                                                      " at point '" + s.label + "'");
    out.spread = std::max(out.spread, s.spread);
    out.equivariance = std::max(out.equivariance, s.equivariance);
  }
  return out;
}

// ---- SL(2) stages ----

struct Sl2Params {
  int K = 8;              // modifications at least K n apart
  double delta = 0.014;   // needs 14 delta < lambda
  long n_max = 1L << 22;  // search budget for n
  long lyap_n = 20000;
  long lyap_samples = 16;
  long line_samples = 2;  // plain Gibbs points in addition to the planted probes
  double line_tol = 1e-6;
  int workers = 1;
};

// Representative point of a bad-set cylinder: opener at offset i, zero counts fixed.
struct BadSetWitness {
  long offset = 0;
  long zeros_before = 0, zeros_after = 0;  // z1, z2
  double expected = 0, measured = 0;       // log ||M^n||
};

struct StageRecord {
  int stage = 0;
  CocycleTable cocycle;
  long n = 0;
  double eps = 0, eps_total = 0, lambda = 0, delta = 0;
  int K = 0;
  double lambda_prev = 0;  // estimate of lambda_+ before this stage
  ExchangePath opener, closer;
  // A = union over offsets i in [band_lo, band_hi] of {fired opener at i, |z1 - z2| <= t_max,
  // no other firing in [0, n)}
  long band_lo = 0, band_hi = 0, t_max = 0;
  double pattern_measure = 0, foreign_bound = 0, max_tail_bound = 0;
  double mu_A_lower = 0, u_value = 0;
  double max_log_norm_A = 0, log_norm_threshold = 0;
  std::vector<BadSetWitness> witnesses;
  double witness_error = 0;
  double spacing = 0;
  double sup_distance = 0, det_residual = 0;
  LyapunovEstimate lyap;
  double lyap_floor = 0;
  LineFields lines;
  double earlier_recheck = 0;
  std::vector<std::string> failures;
  bool accepted = false;
};

namespace detail {

struct DiagFamily {
  Symbol quiet = 1, active = 0;
  double log_a = 0;  // M = diag(a, 1/a) on the active symbol
  double p_active = 0, p_quiet = 0;
};

// The certificates below use the structure of M_0: two symbols, identity on the quiet one,
// diag(a, 1/a) with a > 1 on the other, i.i.d. symbols.
inline DiagFamily check_family(const CocycleTable& c, const GibbsModel& g) {
  auto bad = [](const std::string& why) { throw ConfigError("modify_stage: " + why); };
  if (c.d != 2 || c.alphabet != 2 || c.l != 0 || c.r != 0)
    bad("certificates cover range-0 cocycles on two symbols in dimension 2");
  if (c.spec.alphabet_size != 2 || !c.spec.admissible(parse_word("0011")))
    bad("the base must be the full 2-shift");
  DiagFamily f;
  int quiet = -1;
  for (int a = 0; a < 2; ++a)
    if (c.gen[std::size_t(a)].isApprox(Mat::Identity(2, 2), 0.0)) quiet = a;
  if (quiet < 0) bad("no symbol with identity generator (x_* cylinder)");
  f.quiet = Symbol(quiet);
  f.active = Symbol(1 - quiet);
  const Mat& m = c.gen[std::size_t(f.active)];
  if (m(0, 1) != 0 || m(1, 0) != 0 || !(m(0, 0) > 1) || std::abs(m(0, 0) * m(1, 1) - 1) > 1e-12)
    bad("active generator must be diag(a, 1/a) with a > 1");
  f.log_a = std::log(m(0, 0));
  const int S = g.num_states();
  for (int u = 1; u < S; ++u)
    for (int v = 0; v < S; ++v)
      if (std::abs(g.P(u, v) - g.P(0, v)) > 1e-14) bad("measure certificates need a Bernoulli measure");
  f.p_active = cylinder_measure(g, Word{f.active});
  f.p_quiet = cylinder_measure(g, Word{f.quiet});
  return f;
}

// block 0 1^k 0 with 0 the active symbol
inline double block_measure(const DiagFamily& f, int k) { return f.p_active * f.p_active * std::pow(f.p_quiet, k); }

struct BadSetBound {
  long band_lo = 0, band_hi = 0, t_max = 0;
  double pattern = 0, foreign = 0, max_tail = 0, mu_lower = 0;
};

// Lower bound for mu(A) at scale n (gap D = n): per offset, pattern measure times
// 1 - P(|z1 - z2| > t | pattern) - P(another firing touches [0, n) | pattern).
// The zero-count difference is a sum of independent +-1/0 terms (Hoeffding); foreign
// firings are union-bounded, each foreign block sharing at most one border symbol with the
// planted ones.
inline BadSetBound bad_set_bound(const DiagFamily& f, const std::vector<RunPairRule>& earlier, int ko, int kc,
                                 long n, double lambda, double lambda_plus, double delta) {
  BadSetBound b;
  const double half = double(n) / 2, w = delta * double(n) / lambda_plus;
  b.band_lo = std::max(1L, long(std::ceil(half - w)));
  b.band_hi = std::min(n - ko - 1, long(std::floor(half + w)));
  b.t_max = long(std::ceil(double(n) * lambda / (2 * f.log_a))) - 1;
  while (b.t_max >= 0 && !(double(b.t_max) * f.log_a < double(n) * lambda / 2)) --b.t_max;
  b.pattern = block_measure(f, ko) * block_measure(f, kc);
  auto pair_rate = [&](int a, int c) { return block_measure(f, a) * block_measure(f, c) / (f.p_active * f.p_active); };
  b.foreign = double(2 * n + ko + kc - 2) * pair_rate(ko, kc);
  for (auto& q : earlier) b.foreign += double(2 * n + q.opener_len + q.closer_len - 2) * pair_rate(q.opener_len, q.closer_len);
  if (b.band_hi < b.band_lo || b.t_max < 0) return b;
  for (long i = b.band_lo; i <= b.band_hi; ++i) {
    const double n1 = double(i - 1), n2 = double(n - i - ko - 1);
    const double mean = f.p_active * (n1 - n2);
    const double s = double(b.t_max + 1) - std::abs(mean);
    const double tail = s <= 0 ? 1.0 : std::min(1.0, 2 * std::exp(-2 * s * s / (n1 + n2)));
    b.max_tail = std::max(b.max_tail, tail);
    b.mu_lower += b.pattern * std::max(0.0, 1.0 - tail - b.foreign);
  }
  return b;
}

// Window realizing a bad-set cylinder: planted opener at i and closer at i + gap, zeros
// spread evenly over [0, i-1) and (i+ko, n), period-2 filler elsewhere.
inline PointWindow witness_window(const RunPairRule& q, const DiagFamily& f, long n, long i, long b1, long b2,
                                  long reach) {
  PointWindow w{-reach, Word(std::size_t(n + 2 * reach), f.quiet)};
  for (long j = -reach; j < n + reach; ++j) w.symbols[std::size_t(j + reach)] = (j & 1) ? f.quiet : f.active;
  auto put = [&](long j, Symbol a) { w.symbols[std::size_t(j + reach)] = a; };
  auto spread = [&](long from, long len, long zeros) {
    for (long j = 0; j < len; ++j)
      put(from + j, (len > 0 && (j + 1) * zeros / len > j * zeros / len) ? f.active : f.quiet);
  };
  spread(0, i - 1, b1);
  spread(i + q.opener_len + 1, n - i - q.opener_len - 1, b2);
  auto block = [&](long s, int k) {
    put(s - 1, f.active);
    for (long j = 0; j < k; ++j) put(s + j, f.quiet);
    put(s + k, f.active);
  };
  block(i, q.opener_len);
  block(i + q.gap, q.closer_len);
  return w;
}

// m * 2^e with m = 0 or 0.5 <= |m| < 1: products along A need exponents far outside double
// range, and the entry that J moves into the expanding slot is 2^{-2 z1} times the largest.
struct XFloat {
  double m = 0;
  long e = 0;

  static XFloat of(double v) {
    XFloat x;
    int k = 0;
    x.m = std::frexp(v, &k);
    x.e = x.m == 0 ? 0 : k;
    return x;
  }
  XFloat operator*(const XFloat& o) const {
    if (m == 0 || o.m == 0) return {};
    int k = 0;
    XFloat x;
    x.m = std::frexp(m * o.m, &k);
    x.e = e + o.e + k;
    return x;
  }
  XFloat operator+(const XFloat& o) const {
    if (m == 0) return o;
    if (o.m == 0) return *this;
    const XFloat& big = e >= o.e ? *this : o;
    const XFloat& small = e >= o.e ? o : *this;
    if (big.e - small.e > 1100) return big;
    int k = 0;
    XFloat x;
    x.m = std::frexp(big.m + std::ldexp(small.m, int(small.e - big.e)), &k);
    x.e = x.m == 0 ? 0 : big.e + k;
    return x;
  }
};

// log ||M^n(x)|| over ids with per-entry exponents (full runs collapsed to their products)
inline double extended_log_norm(const MatrixBank& bank, const std::vector<int>& ids, int d) {
  std::vector<XFloat> acc(std::size_t(d * d)), nxt(acc.size());
  for (int i = 0; i < d; ++i) acc[std::size_t(i * d + i)] = XFloat::of(1);
  std::vector<std::vector<XFloat>> cache(bank.mats.size());
  for (int id : collapse_runs(bank, ids)) {
    if (bank.identity[std::size_t(id)]) continue;
    auto& m = cache[std::size_t(id)];
    if (m.empty())
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m.push_back(XFloat::of((*bank.mats[std::size_t(id)])(i, j)));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        XFloat s;
        for (int k = 0; k < d; ++k) s = s + m[std::size_t(i * d + k)] * acc[std::size_t(k * d + j)];
        nxt[std::size_t(i * d + j)] = s;
      }
    std::swap(acc, nxt);
  }
  long emax = std::numeric_limits<long>::min();
  for (auto& x : acc)
    if (x.m != 0) emax = std::max(emax, x.e);
  Mat scaled(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const auto& x = acc[std::size_t(i * d + j)];
      scaled(i, j) = x.m == 0 || emax - x.e > 1100 ? 0.0 : std::ldexp(x.m, int(x.e - emax));
    }
  return double(emax) * std::log(2.0) + std::log(op_norm(scaled));
}

inline std::vector<BadSetWitness> evaluate_witnesses(const CocycleTable& c, const RunPairRule& q,
                                                     const DiagFamily& f, long n, long band_lo, long band_hi,
                                                     long t_max, const std::vector<BadSetWitness>& reuse = {}) {
  std::vector<BadSetWitness> ws = reuse;
  if (ws.empty()) {
    for (long i : {band_lo, (band_lo + band_hi) / 2, band_hi})
      for (long dz : {-t_max, 0L, t_max}) {
        const long n1 = i - 1, n2 = n - i - q.opener_len - 1;
        // b1 - b2 = dz with both counts feasible
        long b2 = std::clamp((n2 - dz) / 2, std::max(0L, -dz), std::min(n2, n1 - dz));
        BadSetWitness wt;
        wt.offset = i;
        wt.zeros_before = 1 + b2 + dz;
        wt.zeros_after = 1 + b2;
        if (b2 + dz < 0 || b2 + dz > n1) continue;
        ws.push_back(wt);
      }
  }
  const long reach = std::max(c.reach_left(), c.reach_right());
  for (auto& wt : ws) {
    auto x = witness_window(q, f, n, wt.offset, wt.zeros_before - 1, wt.zeros_after - 1, reach);
    wt.expected = double(std::abs(wt.zeros_before - wt.zeros_after)) * f.log_a;
    MatrixBank bank(c);
    wt.measured = extended_log_norm(bank, matrix_ids(c, bank, x, 0, n), c.d);
  }
  return ws;
}

}  // namespace detail

// Lines of E^u, E^s sampled inside a long quiet run (where the cocycle is the identity)
// and on plain Gibbs points.
inline std::vector<LineFieldProbe> quiet_probes(Symbol quiet, Symbol active) {
  Word w{active};
  w.insert(w.end(), 40, quiet);
  w.push_back(active);
  return {{"quiet run", {{-1, w}}}};
}

// Stage 0: the unmodified cocycle with its P_lambda certificates.
inline StageRecord initial_stage_record(const CocycleTable& c, const GibbsModel& g, double lambda, std::uint64_t seed,
                                        const Sl2Params& params = {}) {
  auto f = detail::check_family(c, g);
  StageRecord r;
  r.cocycle = c;
  r.lambda = lambda;
  r.lyap = lyapunov_estimate(c, g, params.lyap_n, params.lyap_samples, seed, params.workers);
  r.lines = recover_line_fields(c, g, c.reach_left() + 41, 1e-8, quiet_probes(f.quiet, f.active), params.line_samples,
                                seed ^ 0x11FE, 0, params.workers);
  if (!(r.lyap.exponents[0] - 3 * r.lyap.stderr_[0] > lambda)) r.failures.push_back("lambda_+ estimate - 3 stderr > lambda");
  r.accepted = r.failures.empty();
  return r;
}

// Re-evaluates a stage's bad-set witnesses on a later cocycle.
inline double recheck_witnesses(const StageRecord& rec, const CocycleTable& later, const GibbsModel& g) {
  if (rec.stage < 1) return 0;
  auto f = detail::check_family(later, g);
  auto ws = detail::evaluate_witnesses(later, later.rules[std::size_t(rec.stage - 1)], f, rec.n, rec.band_lo,
                                       rec.band_hi, rec.t_max, rec.witnesses);
  double err = 0;
  for (auto& w : ws) {
    err = std::max(err, std::abs(w.measured - w.expected));
    if (!(w.measured < rec.log_norm_threshold)) err = std::max(err, w.measured - rec.log_norm_threshold + 1);
  }
  return err;
}

// One modification: a pair of quiet runs of exact lengths (ko, ko+1) at distance n carries
// the two exchange paths. On A the product over [0, n) is diag(a^{z2-z1}, a^{z1-z2}) G,
// so its log-norm is |z1 - z2| log a.
inline StageRecord modify_stage(const StageRecord& prev, const GibbsModel& g, double lambda, double eps, long n0,
                                const std::function<double(long)>& u, std::uint64_t seed,
                                const Sl2Params& params = {}) {
  if (!(lambda > 0)) throw ConfigError("modify_stage: lambda must be positive");
  if (!(eps > 0 && eps <= 1)) throw ConfigError("modify_stage: eps must be in (0, 1]");
  if (params.K < 6) throw ConfigError("modify_stage: K must be >= 6");
  if (!(params.delta > 0 && 14 * params.delta < lambda))
    throw ConfigError("modify_stage: precondition 14 delta < lambda violated");
  if (prev.eps_total + eps > 1 + 1e-15) throw ConfigError("modify_stage: sum of stage eps would exceed 1");
  if (!prev.accepted) throw NumericRefusal("modify_stage", "previous stage was not accepted");
  const auto& pl = prev.lyap;
  if (!(pl.exponents[0] - 3 * pl.stderr_[0] > lambda))
    throw NumericRefusal("modify_stage", "previous cocycle not certified: lambda_+ estimate - 3 stderr <= lambda");
  if (!(prev.lines.equivariance <= 1e-8))
    throw NumericRefusal("modify_stage", "previous line fields not certified");
  const auto f = detail::check_family(prev.cocycle, g);
  const auto* quiet = prev.lines.find("quiet run");
  if (!quiet) throw NumericRefusal("modify_stage", "previous record has no line fields in the identity region");

  StageRecord r;
  r.stage = prev.stage + 1;
  r.eps = eps;
  r.eps_total = prev.eps_total + eps;
  r.lambda = lambda;
  r.delta = params.delta;
  r.K = params.K;
  r.lambda_prev = pl.exponents[0];

  // exchange segments inside quiet runs, where the cocycle is the identity, so the frame
  // is the same at both ends
  Mat frame(2, 2);
  frame.col(0) = quiet->eu;
  frame.col(1) = quiet->es;
  int ko = std::max(3, minimal_exchange_k(frame, frame, eps));
  auto clash = [&](int k) {
    for (auto& q : prev.cocycle.rules)
      if (k == q.opener_len || k == q.closer_len || k + 1 == q.opener_len || k + 1 == q.closer_len) return true;
    return false;
  };
  while (clash(ko)) ++ko;
  const int kc = ko + 1;
  r.opener = exchange_path(frame, frame, ko, eps);
  r.closer = exchange_path(frame, frame, kc, eps);

  // smallest n > n0 with the mu(A) bound >= u(n)
  auto ok = [&](long n) {
    auto b = detail::bad_set_bound(f, prev.cocycle.rules, ko, kc, n, lambda, r.lambda_prev, params.delta);
    return b.mu_lower >= u(n);
  };
  long lo = std::max(n0, long(4 * (kc + 2))), hi = lo + 1;
  while (!ok(hi)) {
    if (hi >= params.n_max) {
      auto b = detail::bad_set_bound(f, prev.cocycle.rules, ko, kc, params.n_max, lambda, r.lambda_prev, params.delta);
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "no modifiable O_p within n_max = %ld: runs (%d, %d) have pattern measure %.3g, mu(A) bound %.3g "
                    "< u(n_max) = %.3g",
                    params.n_max, ko, kc, b.pattern, b.mu_lower, u(params.n_max));
      throw NumericRefusal("modify_stage", buf);
    }
    lo = hi;
    hi = std::min(params.n_max, 2 * hi);
  }
  while (hi - lo > 1) {
    const long mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  r.n = hi;
  const auto b = detail::bad_set_bound(f, prev.cocycle.rules, ko, kc, r.n, lambda, r.lambda_prev, params.delta);
  r.band_lo = b.band_lo;
  r.band_hi = b.band_hi;
  r.t_max = b.t_max;
  r.pattern_measure = b.pattern;
  r.foreign_bound = b.foreign;
  r.max_tail_bound = b.max_tail;
  r.mu_A_lower = b.mu_lower;
  r.u_value = u(r.n);
  r.spacing = 1.0 / b.pattern;

  RunPairRule rule;
  rule.quiet = f.quiet;
  rule.opener_len = ko;
  rule.closer_len = kc;
  rule.gap = r.n;
  rule.opener_steps = r.opener.steps;
  rule.closer_steps = r.closer.steps;
  rule.opener_product = r.opener.target;
  rule.closer_product = r.closer.target;
  r.cocycle = prev.cocycle;
  r.cocycle.rules.push_back(rule);
  r.cocycle.kind = "sl2_stage";
  r.cocycle.det_class = "sl2";

  // modified positions sit in quiet runs of lengths no earlier rule uses, where the
  // previous cocycle is the identity
  const Mat& id = prev.cocycle.gen[std::size_t(f.quiet)];
  for (auto* steps : {&rule.opener_steps, &rule.closer_steps})
    for (auto& q : *steps) r.sup_distance = std::max(r.sup_distance, op_norm(q - id));
  for (auto& m : r.cocycle.gen) r.det_residual = std::max(r.det_residual, std::abs(m.determinant() - 1));
  for (auto& q : r.cocycle.rules)
    for (auto* steps : {&q.opener_steps, &q.closer_steps})
      for (auto& m : *steps) r.det_residual = std::max(r.det_residual, std::abs(m.determinant() - 1));

  r.log_norm_threshold = double(r.n) * lambda / 2;
  r.max_log_norm_A = double(r.t_max) * f.log_a;
  r.witnesses = detail::evaluate_witnesses(r.cocycle, rule, f, r.n, r.band_lo, r.band_hi, r.t_max);
  for (auto& w : r.witnesses) {
    r.witness_error = std::max(r.witness_error, std::abs(w.measured - w.expected));
    r.max_log_norm_A = std::max(r.max_log_norm_A, w.measured);
  }

  r.lyap = lyapunov_estimate(r.cocycle, g, params.lyap_n, params.lyap_samples, seed, params.workers);
  r.lyap_floor = r.lambda_prev - (2 * r.lambda_prev + 6 * params.delta) * double(r.n) / r.spacing;

  auto fail = [&](const std::string& s) { r.failures.push_back(s); };
  // probes: inside the quiet run, in the opener, between the runs, in and after the closer
  auto probes = quiet_probes(f.quiet, f.active);
  auto block = [&](long s, int k) {
    Word w{f.active};
    w.insert(w.end(), std::size_t(k), f.quiet);
    w.push_back(f.active);
    return Plant{s - 1, w};
  };
  const long D = r.n;
  probes.push_back({"in opener", {block(-5, ko), block(-5 + D, kc)}});
  probes.push_back({"between runs", {block(-D / 2, ko), block(D - D / 2, kc)}});
  probes.push_back({"in closer", {block(-7 - D, ko), block(-7, kc)}});
  probes.push_back({"after closer", {block(-30 - D, ko), block(-30, kc)}});
  try {
    r.lines = recover_line_fields(r.cocycle, g, r.cocycle.reach_left() + 64, params.line_tol, probes, params.line_samples,
                                  seed ^ 0x11FE, 0, params.workers);
  } catch (const NumericRefusal& e) {
    fail("line-field recovery: " + e.reason);
  }
  r.earlier_recheck = recheck_witnesses(prev, r.cocycle, g);

  if (!(r.sup_distance <= eps)) fail("sup-distance <= eps");
  if (!(r.det_residual <= 1e-10)) fail("det residual <= 1e-10");
  if (!(r.mu_A_lower >= r.u_value)) fail("mu(A) >= u(n)");
  if (!(r.max_log_norm_A < r.log_norm_threshold)) fail("log-norm on A < n lambda / 2");
  if (r.witnesses.empty() || !(r.witness_error <= 1e-9 * double(r.n))) fail("per-cylinder evaluation on A");
  if (!(r.lyap.exponents[0] - 3 * r.lyap.stderr_[0] > lambda)) fail("lambda_+ estimate - 3 stderr > lambda");
  if (!(r.n > n0)) fail("n > n0");
  if (!(r.spacing >= double(params.K) * double(r.n))) fail("spacing >= K n");
  if (!(r.earlier_recheck <= 1e-9 * double(prev.n + 1))) fail("earlier stage re-check");
  r.accepted = r.failures.empty();
  return r;
}

}  // namespace clab
