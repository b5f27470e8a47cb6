#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cocycle.hpp"
#include "pesin.hpp"

namespace clab {

constexpr int kBirkhoff = 0;  // DeviationPoint::i for Birkhoff-sum deviations

struct DeviationPoint {
  long n = 0;
  double eps = 0;
  int i = 1;
  double probability = 0;
  std::string method = "exact";
  double ci_low = 0, ci_high = 0;
};

struct Interval {
  double low, high;
};

inline Interval wilson(long hits, long trials, double z = 1.959963984540054) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = double(trials), p = double(hits) / n, z2 = z * z;
  const double den = 1 + z2 / n;
  const double centre = (p + z2 / (2 * n)) / den;
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den;
  return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == trials ? 1.0 : std::min(1.0, centre + half)};
}

// Sum of cylinder measures of admissible words at [start, start+len) where pred holds.
// Fixed-size blocks reduced in order, so the result does not depend on workers.
inline double exact_probability(const GibbsModel& g, long start, int len,
                                const std::function<bool(const PointWindow&)>& pred, int workers = 0,
                                std::uint64_t cap = size_cap()) {
  auto words = enumerate_words(g.spec, len, cap);
  constexpr std::size_t kBlock = 4096;
  const std::size_t nb = (words.size() + kBlock - 1) / kBlock;
  std::vector<double> part(nb, 0.0);
  parallel_for(nb, workers, [&](std::size_t b) {
    double acc = 0;
    PointWindow w{start, {}};
    for (std::size_t k = b * kBlock; k < std::min(words.size(), (b + 1) * kBlock); ++k) {
      w.symbols = words[k];
      if (pred(w)) acc += cylinder_measure(g, words[k]);
    }
    part[b] = acc;
  });
  double tot = 0;
  for (double v : part) tot += v;
  return tot;
}

inline long mc_hits(const GibbsModel& g, long left, long right, long samples, std::uint64_t seed,
                    const std::function<bool(const PointWindow&)>& pred, int workers = 0) {
  std::vector<char> hit(std::size_t(samples), 0);
  parallel_for(std::size_t(samples), workers, [&](std::size_t s) {
    Stream rng = derive_stream(seed, s);
    hit[s] = pred(sample_two_sided(g, rng, left, right)) ? 1 : 0;
  });
  long h = 0;
  for (char c : hit) h += c;
  return h;
}

namespace detail {

// |log||Lambda^i M^n(x)|| - n * rate| for signed n; rate uses head sums (n > 0) or tail sums (n < 0).
inline double cocycle_deviation(const CocycleTable& c, const MatrixBank& bank, const ExteriorBank& ext,
                                const PointWindow& w, int i, long n, const std::vector<double>& lyap) {
  ExteriorAccumulator acc(bank, ext, c.d);
  double rate = 0, ln;
  if (n >= 0) {
    for (int id : matrix_ids(c, bank, w, 0, n, "deviation")) acc.push(id, true);
    ln = acc.log_norm(i);
    for (int j = 0; j < i; ++j) rate += lyap[j];
  } else {
    auto ids = matrix_ids(c, bank, w, n, 0, "deviation");
    for (auto it = ids.rbegin(); it != ids.rend(); ++it) acc.push(*it, false);
    ln = acc.log_norm(c.d - i) - acc.log_norm(c.d);
    for (int j = 0; j < i; ++j) rate += lyap[c.d - 1 - j];
  }
  return std::abs(ln - double(n) * rate);
}

inline void check_deviation_args(const CocycleTable& c, int i, long n, double eps, const std::vector<double>& lyap) {
  if (i < 1 || i > c.d) throw ConfigError("deviation: index i must be in [1, d]");
  if (n == 0) throw ConfigError("deviation: n must be nonzero");
  if (!(eps >= 0)) throw ConfigError("deviation: eps must be >= 0");
  if (int(lyap.size()) != c.d) throw ConfigError("deviation: need one exponent per dimension");
}

inline std::pair<long, long> deviation_range(const CocycleTable& c, long n) {
  if (n > 0) return {-c.reach_left(), n - 1 + c.reach_right()};
  return {n - c.reach_left(), -1 + c.reach_right()};
}

}  // namespace detail

inline DeviationPoint deviation_prob_exact(const CocycleTable& c, const GibbsModel& g, int i, long n, double eps,
                                           const std::vector<double>& lyap, int workers = 0,
                                           std::uint64_t cap = size_cap()) {
  detail::check_deviation_args(c, i, n, eps, lyap);
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  auto [a, b] = detail::deviation_range(c, n);
  const double thr = std::abs(double(n)) * eps;
  double p = exact_probability(
      g, a, int(b - a + 1),
      [&](const PointWindow& w) { return detail::cocycle_deviation(c, bank, ext, w, i, n, lyap) >= thr; }, workers,
      cap);
  p = std::clamp(p, 0.0, 1.0);
  return {n, eps, i, p, "exact", p, p};
}

inline DeviationPoint deviation_prob_mc(const CocycleTable& c, const GibbsModel& g, int i, long n, double eps,
                                        const std::vector<double>& lyap, long samples, std::uint64_t seed,
                                        int workers = 0) {
  detail::check_deviation_args(c, i, n, eps, lyap);
  if (samples < 100) throw ConfigError("deviation_prob_mc: samples must be >= 100");
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  auto [a, b] = detail::deviation_range(c, n);
  const double thr = std::abs(double(n)) * eps;
  long h = mc_hits(g, -a, b, samples, seed,
                   [&](const PointWindow& w) { return detail::cocycle_deviation(c, bank, ext, w, i, n, lyap) >= thr; },
                   workers);
  auto ci = wilson(h, samples);
  return {n, eps, i, double(h) / double(samples), "mc", ci.low, ci.high};
}

// integral of a potential against the Gibbs measure
inline double potential_mean(const GibbsModel& g, const PotentialTable& f) {
  double m = 0;
  for_each_word(g.spec, f.range, [&](const Word& w) { m += cylinder_measure(g, w) * f(w.data()); });
  return m;
}

inline double birkhoff_sum(const PotentialTable& f, const PointWindow& w, long n) {
  double s = 0;
  for (long j = 0; j < n; ++j) s += f(w.ptr(j));
  return s;
}

inline DeviationPoint birkhoff_prob_exact(const GibbsModel& g, const PotentialTable& f, long n, double eps,
                                          int workers = 0, std::uint64_t cap = size_cap()) {
  if (n < 1) throw ConfigError("birkhoff deviation: n must be >= 1");
  const double mean = potential_mean(g, f);
  double p = exact_probability(
      g, 0, int(n + f.range - 1),
      [&](const PointWindow& w) { return std::abs(birkhoff_sum(f, w, n) / double(n) - mean) >= eps; }, workers, cap);
  p = std::clamp(p, 0.0, 1.0);
  return {n, eps, kBirkhoff, p, "exact", p, p};
}

inline DeviationPoint birkhoff_prob_mc(const GibbsModel& g, const PotentialTable& f, long n, double eps, long samples,
                                       std::uint64_t seed, int workers = 0) {
  if (n < 1) throw ConfigError("birkhoff deviation: n must be >= 1");
  if (samples < 100) throw ConfigError("birkhoff deviation: samples must be >= 100");
  const double mean = potential_mean(g, f);
  long h = mc_hits(g, 0, n + f.range - 2, samples, seed, [&](const PointWindow& w) {
    return std::abs(birkhoff_sum(f, w, n) / double(n) - mean) >= eps;
  }, workers);
  auto ci = wilson(h, samples);
  return {n, eps, kBirkhoff, double(h) / double(samples), "mc", ci.low, ci.high};
}

struct RateFit {
  std::vector<DeviationPoint> points;
  double slope = 0;      // decay rate from log p_n + log(n)/2 against n
  double raw_slope = 0;  // decay rate from log p_n against n
  double intercept = 0;
  double r2 = 0;
  bool slope_infinite = false;
  std::string verdict;
};

namespace detail {

struct LineFit {
  double slope, intercept, r2;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  double b = sxy / sxx;
  double r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {b, my - b * mx, r2};
}

}  // namespace detail

inline RateFit rate_profile(const std::vector<DeviationPoint>& points) {
  RateFit f;
  f.points = points;
  if (points.empty()) throw ConfigError("rate_profile: no points");
  for (std::size_t k = 1; k < points.size(); ++k)
    if (std::abs(points[k].n) <= std::abs(points[k - 1].n)) throw ConfigError("rate_profile: n must increase");
  bool zero = false;
  for (auto& p : points) zero |= !(p.probability > 0);
  if (zero) {
    f.slope = f.raw_slope = std::numeric_limits<double>::infinity();
    f.slope_infinite = true;
    f.verdict = "exponential";
    return f;
  }
  if (points.size() < 4) throw ConfigError("rate_profile: need >= 4 points with positive probability");
  std::vector<double> x, y, yr;
  for (auto& p : points) {
    double n = std::abs(double(p.n));
    x.push_back(n);
    yr.push_back(std::log(p.probability));
    y.push_back(std::log(p.probability) + 0.5 * std::log(n));
  }
  auto fit = detail::least_squares(x, y);
  f.slope = -fit.slope;
  f.intercept = fit.intercept;
  f.r2 = fit.r2;
  f.raw_slope = -detail::least_squares(x, yr).slope;
  const double nmax = x.back();
  if (f.slope > 0.02 && f.r2 > 0.9) f.verdict = "exponential";
  else if (f.slope < 0.005 || f.slope * nmax < 0.5) f.verdict = "subexponential";
  else f.verdict = "inconclusive";
  return f;
}

// ---- returns to nice sets ----

// Per-time test function with the coordinate reach it needs around index 0.
struct PointTest {
  std::function<double(const PointWindow&)> value;
  long reach_left = 0, reach_right = 0;
};

inline PointTest pesin_test(const CocycleTable& c, const std::vector<double>& lyap, double eps, long horizon) {
  return {[c, lyap, eps, horizon](const PointWindow& w) { return pesin_value(c, w, lyap, eps, horizon); },
          horizon + c.reach_left(), horizon + c.reach_right()};
}

// u(n, x) with the reach needed for n <= n_max.
struct SubadditiveEvaluator {
  std::function<double(long, const PointWindow&)> a;
  long reach_left = 0, reach_right = 0;  // beyond [0, n-1]
};

inline SubadditiveEvaluator norm_evaluator(const CocycleTable& c, int i = 1, double shift = 0.0) {
  auto cc = std::make_shared<CocycleTable>(c);
  auto bank = std::make_shared<MatrixBank>(*cc);  // points into cc's generators
  auto ext = std::make_shared<ExteriorBank>(*bank, c.d);
  return {[cc, bank, ext, i, shift](long n, const PointWindow& w) {
            ExteriorAccumulator acc(*bank, *ext, cc->d);
            for (int id : matrix_ids(*cc, *bank, w, 0, n, "norm_evaluator")) acc.push(id, true);
            return acc.log_norm(i) - shift * double(n);
          },
          c.reach_left(), c.reach_right()};
}

inline SubadditiveEvaluator birkhoff_evaluator(const PotentialTable& f, double shift = 0.0) {
  return {[f, shift](long n, const PointWindow& w) { return birkhoff_sum(f, w, n) - shift * double(n); }, 0,
          f.range - 1};
}

// F(x) = max_{0<=m<=horizon} |u(m,x)| - eps m
inline PointTest subadditive_test(const SubadditiveEvaluator& u, double eps, long horizon) {
  return {[u, eps, horizon](const PointWindow& w) {
            double F = 0;
            for (long m = 1; m <= horizon; ++m) F = std::max(F, std::abs(u.a(m, w)) - eps * double(m));
            return F;
          },
          u.reach_left, horizon - 1 + u.reach_right};
}

struct ReturnStatistic {
  long n = 0;
  double delta = 0, C_thresh = 0;
  double p_hat = 0, ci_low = 0, ci_high = 0;
  long samples = 0;
  std::vector<long> histogram;  // [k] = samples with exactly k bad times, k = 0..n
};

inline ReturnStatistic return_statistic(const PointTest& test, const GibbsModel& g, long n, double C_thresh,
                                        double delta, long samples, std::uint64_t seed, int workers = 0) {
  if (n < 1 || samples < 1) throw ConfigError("return_statistic: need n >= 1 and samples >= 1");
  std::vector<long> bad(std::size_t(samples), 0);
  parallel_for(std::size_t(samples), workers, [&](std::size_t s) {
    Stream rng = derive_stream(seed, s);
    PointWindow w = sample_two_sided(g, rng, test.reach_left, n - 1 + test.reach_right);
    long k = 0;
    for (long j = 0; j < n; ++j)
      if (test.value(shift_window(w, j)) > C_thresh) ++k;
    bad[s] = k;
  });
  ReturnStatistic r;
  r.n = n;
  r.delta = delta;
  r.C_thresh = C_thresh;
  r.samples = samples;
  r.histogram.assign(std::size_t(n + 1), 0);
  long hits = 0;
  for (long k : bad) {
    ++r.histogram[std::size_t(k)];
    if (double(k) >= delta * double(n)) ++hits;
  }
  r.p_hat = double(hits) / double(samples);
  auto ci = wilson(hits, samples);
  r.ci_low = ci.low;
  r.ci_high = ci.high;
  return r;
}

// Values of the test at independently sampled points (for picking C_thresh).
inline std::vector<double> sample_test_values(const PointTest& test, const GibbsModel& g, long samples,
                                              std::uint64_t seed, int workers = 0) {
  std::vector<double> v(static_cast<std::size_t>(samples));
  parallel_for(std::size_t(samples), workers, [&](std::size_t s) {
    Stream rng = derive_stream(seed, s);
    v[s] = test.value(sample_two_sided(g, rng, test.reach_left, test.reach_right));
  });
  return v;
}

// Type-7 (linear interpolation) empirical quantile.
inline double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("empirical_quantile: no values");
  std::sort(v.begin(), v.end());
  double h = (double(v.size()) - 1) * q;
  std::size_t lo = std::size_t(std::floor(h));
  std::size_t hi = std::min(v.size() - 1, lo + 1);
  if (std::isinf(v[lo]) || std::isinf(v[hi])) return v[hi];
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

// max over samples and 0 <= n <= n_max of a(n,x) - S_n(a_N/N)(x).
inline double subadditive_dominator(const SubadditiveEvaluator& u, const GibbsModel& g, long N, long n_max,
                                    long samples, std::uint64_t seed, int workers = 0) {
  if (N < 1 || n_max < 0 || samples < 1) throw ConfigError("subadditive_dominator: need N >= 1, n_max >= 0");
  std::vector<double> best(std::size_t(samples), 0.0);
  parallel_for(std::size_t(samples), workers, [&](std::size_t s) {
    Stream rng = derive_stream(seed, s);
    PointWindow w = sample_two_sided(g, rng, u.reach_left, n_max + N - 1 + u.reach_right);
    double b = 0, S = 0;
    for (long n = 1; n <= n_max; ++n) {
      S += u.a(N, shift_window(w, n - 1)) / double(N);
      b = std::max(b, u.a(n, w) - S);
    }
    best[s] = b;
  });
  double C = 0;
  for (double b : best) C = std::max(C, b);
  return C;
}

}  // namespace clab
