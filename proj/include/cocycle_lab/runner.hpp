#pragma once
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "holonomy.hpp"
#include "report.hpp"
#include "sl2_forge.hpp"
#include "subadditive.hpp"

namespace clab {

// Independent seeds per purpose, all derived from the config seed.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) { return derive_stream(seed, tag).next_u64(); }

namespace run {

enum Tag : std::uint64_t { kLyap = 1, kWindows, kSpectrum, kMc, kQuantile, kPairs, kSl2 };

inline Fields params_of(const ExperimentConfig& cfg) { return Fields(cfg.params, "experiment.params"); }

// Reference spectrum: given explicitly, or estimated from lyap_n / lyap_samples.
struct Spectrum {
  std::vector<double> given;
  long n = 10000, samples = 64;

  static Spectrum parse(Fields& f, const CocycleTable& c) {
    Spectrum s;
    if (f.has("lyapunov")) {
      s.given = f.nums("lyapunov");
      if (int(s.given.size()) != c.d) throw ConfigError(f.at("lyapunov") + ": need one exponent per dimension");
      for (std::size_t i = 1; i < s.given.size(); ++i)
        if (s.given[i] > s.given[i - 1]) throw ConfigError(f.at("lyapunov") + ": exponents must be nonincreasing");
    }
    s.n = f.at_least("lyap_n", f.integer("lyap_n", s.n), 1);
    s.samples = f.at_least("lyap_samples", f.integer("lyap_samples", s.samples), 2);
    return s;
  }
  std::vector<double> resolve(const CocycleTable& c, const GibbsModel& g, std::uint64_t seed, int workers,
                              RunOutput& out) const {
    if (!given.empty()) return given;
    auto est = lyapunov_estimate(c, g, n, samples, sub_seed(seed, kSpectrum), workers);
    out.summary["lyapunov_reference"] = est.exponents;
    out.notes.push_back("reference exponents estimated with n = " + std::to_string(n) +
                        ", samples = " + std::to_string(samples));
    return est.exponents;
  }
};

inline PotentialTable parse_observable(Fields& f, const SubshiftSpec& s) {
  Fields o = f.sub("observable");
  const long r = o.integer("range");
  const Json& v = o.req("values");
  if (!v.is_object()) throw ConfigError(o.at("values") + ": expected an object mapping words to numbers");
  std::map<std::string, double> m;
  for (auto it = v.begin(); it != v.end(); ++it) m[it.key()] = Fields::as_num(it.value(), o.at("values") + "." + it.key());
  o.done();
  try {
    return PotentialTable::from_map(s, int(r), m);
  } catch (const ConfigError& e) {
    throw ConfigError(f.at("observable") + ": " + e.what());
  }
}

inline std::function<double(long)> parse_u(Fields f) {
  const std::string kind = f.choice("kind", {"harmonic", "power"}, "harmonic");
  const double p = kind == "power" ? f.positive("exponent", f.num("exponent")) : 1.0;
  f.done();
  if (kind == "harmonic") return [](long n) { return 1.0 / double(n); };
  return [p](long n) { return std::pow(double(n), -p); };
}

inline PointWindow sample_window(const GibbsModel& g, std::uint64_t seed, std::size_t s, long left, long right) {
  Stream rng = derive_stream(seed, s);
  return sample_two_sided(g, rng, left, right);
}

inline Vec generic_seed_vector(int d) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = std::pow(0.3, i);
  return v;
}

// ---- lyapunov ----

struct LyapunovParams {
  long n = 0, samples = 0;
  static LyapunovParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    LyapunovParams p;
    p.n = f.at_least("n", f.integer("n"), 1);
    p.samples = f.at_least("samples", f.integer("samples"), 2);
    f.done();
    return p;
  }
};

inline RunOutput lyapunov(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = LyapunovParams::parse(cfg);
  auto est = lyapunov_estimate(cfg.cocycle, g, p.n, p.samples, sub_seed(cfg.rng_seed, kLyap), workers);
  Csv csv({"i", "lambda_hat", "stderr", "n", "samples"});
  for (int i = 0; i < cfg.cocycle.d; ++i) csv.row({long(i + 1), est.exponents[i], est.stderr_[i], p.n, p.samples});
  RunOutput out;
  out.add("lyapunov.csv", csv.str());
  out.summary["exponents"] = est.exponents;
  out.summary["stderr"] = est.stderr_;
  return out;
}

// ---- flags ----

struct FlagsParams {
  long n = 0, samples = 8;
  double gap_tol = 1e-6;
  static FlagsParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    FlagsParams p;
    p.n = f.at_least("n", f.integer("n"), 2);
    p.samples = f.at_least("samples", f.integer("samples", p.samples), 1);
    p.gap_tol = f.positive("gap_tol", f.num("gap_tol", p.gap_tol));
    f.done();
    return p;
  }
};

// Singular flags at time n and n/2; the distance between matching blocks shows convergence.
inline RunOutput flags(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = FlagsParams::parse(cfg);
  const auto& c = cfg.cocycle;
  const std::uint64_t seed = sub_seed(cfg.rng_seed, kWindows);
  std::vector<std::vector<std::vector<Csv::Cell>>> rows(std::size_t(p.samples));
  parallel_for(std::size_t(p.samples), workers, [&](std::size_t s) {
    auto w = sample_window(g, seed, s, c.reach_left(), p.n - 1 + c.reach_right());
    auto full = singular_flags(c, w, p.n, p.gap_tol);
    auto half = singular_flags(c, w, p.n / 2, p.gap_tol);
    for (std::size_t b = 0; b < full.blocks.size(); ++b) {
      auto& blk = full.blocks[b];
      double dist = std::nan("");
      for (auto& h : half.blocks)
        if (h.indices == blk.indices) dist = grassmann_distance(h.space, blk.space);
      rows[s].push_back({long(s), long(b + 1), long(blk.indices.front() + 1), long(blk.indices.size()),
                         full.exponents[std::size_t(blk.indices.front())], dist});
    }
  });
  Csv csv({"sample", "block", "first_index", "dim", "exponent", "distance_to_half"});
  long blocks = 0;
  for (auto& rs : rows)
    for (auto& r : rs) {
      csv.row(r);
      ++blocks;
    }
  RunOutput out;
  out.add("flags.csv", csv.str());
  out.summary["rows"] = blocks;
  return out;
}

// ---- pesin ----

struct PesinParams {
  double eps = 0, rho = 0.3, C_quantile = 0.9;
  std::optional<double> C;
  long horizon = 0, samples = 0;
  Spectrum spectrum;
  static PesinParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    PesinParams p;
    p.eps = f.positive("eps", f.num("eps"));
    p.horizon = f.at_least("horizon", f.integer("horizon"), 1);
    p.samples = f.at_least("samples", f.integer("samples"), 1);
    p.rho = f.in_unit("rho", f.num("rho", p.rho));
    if (f.has("C")) p.C = f.positive("C", f.num("C"));
    p.C_quantile = f.num("C_quantile", p.C_quantile);
    if (!(p.C_quantile > 0 && p.C_quantile <= 1)) throw ConfigError(f.at("C_quantile") + ": must be in (0,1]");
    p.spectrum = Spectrum::parse(f, cfg.cocycle);
    f.done();
    return p;
  }
};

inline RunOutput pesin(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = PesinParams::parse(cfg);
  const auto& c = cfg.cocycle;
  RunOutput out;
  const auto lyap = p.spectrum.resolve(c, g, cfg.rng_seed, workers, out);
  const std::uint64_t seed = sub_seed(cfg.rng_seed, kWindows);
  const std::size_t S = std::size_t(p.samples);
  std::vector<PointWindow> ws(S);
  std::vector<double> B(S);
  parallel_for(S, workers, [&](std::size_t s) {
    ws[s] = sample_window(g, seed, s, p.horizon + c.reach_left() + 1, p.horizon + c.reach_right() + 1);
    B[s] = b_epsilon(c, ws[s], p.eps, lyap, p.horizon).total;
  });
  const double C = p.C ? *p.C : empirical_quantile(B, p.C_quantile);
  struct Row {
    bool accepted = false;
    std::string reason;
    long N1 = 0;
    double D = 0, oracle = std::nan(""), step6 = std::nan(""), a_eps = 0;
  };
  std::vector<Row> rows(S);
  parallel_for(S, workers, [&](std::size_t s) {
    auto res = deterministic_oseledets(c, ws[s], p.eps, C, p.rho, p.horizon, lyap);
    Row& r = rows[s];
    if (auto* est = std::get_if<OseledetsEstimate>(&res)) {
      r.accepted = true;
      r.N1 = est->N1;
      r.D = est->D;
      if (est->E[0].dim == 1)
        r.oracle = grassmann_distance(est->E[0].space,
                                      pullback_direction(c, ws[s], p.horizon, generic_seed_vector(c.d)));
      r.step6 = step6_violation(c, ws[s], *est, p.horizon);
    } else {
      r.reason = std::get<Refusal>(res).reason;
    }
    r.a_eps = pesin_value(c, ws[s], lyap, p.eps, p.horizon);
  });
  Csv csv({"sample", "b_eps", "accepted", "N1", "D", "e1_oracle_distance", "step6_violation", "a_eps", "reason"});
  long acc = 0;
  double worst_oracle = 0, worst_step6 = -1e300;
  for (std::size_t s = 0; s < S; ++s) {
    auto& r = rows[s];
    csv.row({long(s), B[s], long(r.accepted), r.N1, r.D, r.oracle, r.step6, r.a_eps, r.reason});
    if (!r.accepted) continue;
    ++acc;
    if (std::isfinite(r.oracle)) worst_oracle = std::max(worst_oracle, r.oracle);
    worst_step6 = std::max(worst_step6, r.step6);
  }
  out.add("pesin.csv", csv.str());
  std::vector<double> sorted = B;
  std::sort(sorted.begin(), sorted.end());
  PlotSeries cdf{{}, {}, "B_eps"};
  for (std::size_t s = 0; s < S; ++s) {
    cdf.x.push_back(sorted[s]);
    cdf.y.push_back(double(s + 1) / double(S));
  }
  out.plot("pesin_b_eps.svg", {cdf}, "linear", "empirical distribution of B_eps", "B_eps", "fraction <= B_eps");
  out.summary["C"] = C;
  out.summary["acceptance_rate"] = double(acc) / double(S);
  out.summary["max_e1_oracle_distance"] = worst_oracle;
  out.summary["max_step6_violation"] = acc ? worst_step6 : std::nan("");
  return out;
}

// ---- deviations ----

struct DeviationParams {
  std::string mode = "cocycle", method = "exact";
  int i = 1;
  double eps = 0;
  std::vector<long> n_values;
  long samples = 10000;
  Spectrum spectrum;
  std::optional<PotentialTable> observable;
  static DeviationParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    DeviationParams p;
    p.mode = f.choice("mode", {"cocycle", "birkhoff"}, p.mode);
    p.method = f.choice("method", {"exact", "mc"}, p.method);
    p.eps = f.num("eps");
    if (!(p.eps >= 0)) throw ConfigError(f.at("eps") + ": must be >= 0");
    p.n_values = f.ints("n_values");
    if (p.n_values.empty()) throw ConfigError(f.at("n_values") + ": at least one n required");
    for (std::size_t k = 0; k < p.n_values.size(); ++k) {
      if (p.n_values[k] < 1) throw ConfigError(f.at("n_values") + ": entries must be >= 1");
      if (k && p.n_values[k] <= p.n_values[k - 1]) throw ConfigError(f.at("n_values") + ": must be increasing");
    }
    p.samples = f.at_least("samples", f.integer("samples", p.samples), 100);
    if (p.mode == "cocycle") {
      p.i = int(f.integer("i", 1));
      if (p.i < 1 || p.i > cfg.cocycle.d) throw ConfigError(f.at("i") + ": must be in [1, dimension]");
      p.spectrum = Spectrum::parse(f, cfg.cocycle);
    } else {
      p.observable = parse_observable(f, cfg.subshift);
    }
    f.done();
    return p;
  }
};

inline RunOutput deviations(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = DeviationParams::parse(cfg);
  const auto& c = cfg.cocycle;
  RunOutput out;
  std::vector<double> lyap;
  if (p.mode == "cocycle") lyap = p.spectrum.resolve(c, g, cfg.rng_seed, workers, out);
  const std::uint64_t seed = sub_seed(cfg.rng_seed, kMc);
  std::vector<DeviationPoint> pts;
  for (std::size_t k = 0; k < p.n_values.size(); ++k) {
    const long n = p.n_values[k];
    const std::uint64_t sk = sub_seed(seed, k);
    if (p.mode == "cocycle")
      pts.push_back(p.method == "exact" ? deviation_prob_exact(c, g, p.i, n, p.eps, lyap, workers)
                                        : deviation_prob_mc(c, g, p.i, n, p.eps, lyap, p.samples, sk, workers));
    else
      pts.push_back(p.method == "exact" ? birkhoff_prob_exact(g, *p.observable, n, p.eps, workers)
                                        : birkhoff_prob_mc(g, *p.observable, n, p.eps, p.samples, sk, workers));
  }
  Csv csv({"n", "eps", "i", "probability", "method", "ci_low", "ci_high"});
  PlotSeries s{{}, {}, p.mode == "cocycle" ? "i = " + std::to_string(p.i) : "Birkhoff"};
  for (auto& q : pts) {
    csv.row({q.n, q.eps, long(q.i), q.probability, q.method, q.ci_low, q.ci_high});
    s.x.push_back(double(q.n));
    s.y.push_back(q.probability);
  }
  out.add("deviations.csv", csv.str());
  bool any_positive = false;
  for (auto& q : pts) any_positive |= q.probability > 0;
  if (any_positive) out.plot("deviations.svg", {s}, "semilogy", "deviation probability", "n", "p_n");
  else out.notes.push_back("deviations.svg skipped: every probability is zero");
  long positive = 0;
  for (auto& q : pts) positive += q.probability > 0;
  if (positive == long(pts.size()) && pts.size() < 4) {
    out.notes.push_back("rate.csv skipped: a rate fit needs at least 4 points");
  } else {
    auto fit = rate_profile(pts);
    Csv rate({"slope", "raw_slope", "intercept", "r2", "slope_infinite", "verdict"});
    rate.row({fit.slope, fit.raw_slope, fit.intercept, fit.r2, long(fit.slope_infinite), fit.verdict});
    out.add("rate.csv", rate.str());
    out.summary["slope"] = fit.slope_infinite ? Json("inf") : Json(fit.slope);
    out.summary["verdict"] = fit.verdict;
  }
  out.summary["points"] = long(pts.size());
  return out;
}

// ---- returns ----

struct ReturnParams {
  std::string test = "pesin";
  long n = 0, samples = 0, horizon = 0, quantile_samples = 200;
  double delta = 0, eps = 0, C_quantile = 0.9;
  std::optional<double> C_thresh;
  Spectrum spectrum;
  std::optional<PotentialTable> observable;
  static ReturnParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    ReturnParams p;
    p.test = f.choice("test", {"pesin", "birkhoff"}, p.test);
    p.n = f.at_least("n", f.integer("n"), 1);
    p.samples = f.at_least("samples", f.integer("samples"), 1);
    p.delta = f.in_unit("delta", f.num("delta"));
    p.eps = f.positive("eps", f.num("eps"));
    p.horizon = f.at_least("horizon", f.integer("horizon"), 1);
    if (f.has("C_thresh")) p.C_thresh = f.num("C_thresh");
    p.C_quantile = f.in_unit("C_quantile", f.num("C_quantile", p.C_quantile));
    p.quantile_samples = f.at_least("quantile_samples", f.integer("quantile_samples", p.quantile_samples), 1);
    if (p.test == "pesin") p.spectrum = Spectrum::parse(f, cfg.cocycle);
    else p.observable = parse_observable(f, cfg.subshift);
    f.done();
    return p;
  }
};

inline RunOutput returns(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = ReturnParams::parse(cfg);
  RunOutput out;
  PointTest test;
  if (p.test == "pesin") {
    test = pesin_test(cfg.cocycle, p.spectrum.resolve(cfg.cocycle, g, cfg.rng_seed, workers, out), p.eps, p.horizon);
  } else {
    test = subadditive_test(birkhoff_evaluator(*p.observable, potential_mean(g, *p.observable)), p.eps, p.horizon);
  }
  double C = 0;
  if (p.C_thresh) {
    C = *p.C_thresh;
  } else {
    C = empirical_quantile(sample_test_values(test, g, p.quantile_samples, sub_seed(cfg.rng_seed, kQuantile), workers),
                           p.C_quantile);
  }
  auto st = return_statistic(test, g, p.n, C, p.delta, p.samples, sub_seed(cfg.rng_seed, kMc), workers);
  Csv hist({"bad_times", "count"});
  PlotSeries s{{}, {}, "samples"};
  for (std::size_t k = 0; k < st.histogram.size(); ++k) {
    hist.row({long(k), st.histogram[k]});
    s.x.push_back(double(k));
    s.y.push_back(double(st.histogram[k]));
  }
  Csv sum({"n", "delta", "C_thresh", "p_hat", "ci_low", "ci_high", "samples"});
  sum.row({st.n, st.delta, st.C_thresh, st.p_hat, st.ci_low, st.ci_high, st.samples});
  out.add("returns.csv", hist.str());
  out.add("returns_summary.csv", sum.str());
  out.plot("returns.svg", {s}, "linear", "times outside the nice set", "bad times among n", "samples");
  out.summary["p_hat"] = st.p_hat;
  out.summary["C_thresh"] = C;
  return out;
}

// ---- holonomy ----

struct HolonomyParams {
  std::string side = "both", closed_form = "none";
  long pairs = 20, n_max = 40;
  double tol = 1e-12;
  static HolonomyParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    HolonomyParams p;
    p.side = f.choice("side", {"stable", "unstable", "both"}, p.side);
    p.closed_form = f.choice("closed_form", {"none", "remark39"}, p.closed_form);
    p.pairs = f.at_least("pairs", f.integer("pairs", p.pairs), 1);
    p.n_max = f.at_least("n_max", f.integer("n_max", p.n_max), 1);
    p.tol = f.positive("tol", f.num("tol", p.tol));
    f.done();
    if (p.closed_form == "remark39" && cfg.cocycle.kind != "remark39")
      throw ConfigError("experiment.params.closed_form: remark39 closed forms need the remark39 cocycle");
    return p;
  }
};

// y agrees with x on [0, inf) (stable) or (-inf, 0] (unstable) and follows an
// independent sample elsewhere; redrawn until the junction is admissible.
inline PointWindow partner_point(const GibbsModel& g, const PointWindow& x, bool stable, std::uint64_t seed) {
  for (std::uint64_t t = 0; t < 256; ++t) {
    Stream rng = derive_stream(seed, t);
    PointWindow z = sample_two_sided(g, rng, -x.first(), x.last());
    PointWindow y = x;
    for (long i = x.first(); i <= x.last(); ++i)
      if (stable ? i < 0 : i > 0) y.symbols[std::size_t(i - x.first())] = z.at(i);
    if (g.spec.admissible(y.symbols)) return y;
  }
  throw NumericRefusal("holonomy", "no admissible partner point found in 256 draws");
}

inline RunOutput holonomy(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = HolonomyParams::parse(cfg);
  const auto& c = cfg.cocycle;
  const long R = p.n_max + std::max(c.reach_left(), c.reach_right()) + 2;
  const std::uint64_t seed = sub_seed(cfg.rng_seed, kPairs), pseed = sub_seed(cfg.rng_seed, kWindows);
  std::vector<bool> sides;
  if (p.side != "unstable") sides.push_back(true);
  if (p.side != "stable") sides.push_back(false);
  const std::size_t P = std::size_t(p.pairs);
  RunOutput out;
  Csv csv({"pair", "side", "truncation_n", "converged", "residual", "closed_form_truncation_error"});
  for (bool stable : sides) {
    const char* name = stable ? "stable" : "unstable";
    std::vector<std::pair<PointWindow, PointWindow>> pairs(P);
    std::vector<HolonomyResult> res(P);
    std::vector<double> cf(P, std::nan(""));
    parallel_for(P, workers, [&](std::size_t s) {
      auto x = sample_window(g, seed, 2 * s + (stable ? 0 : 1), R, R);
      auto y = partner_point(g, x, stable, sub_seed(pseed, 2 * s + (stable ? 0 : 1)));
      res[s] = stable ? stable_holonomy(c, x, y, p.n_max, p.tol) : unstable_holonomy(c, x, y, p.n_max, p.tol);
      // the explicit family truncated at n_max terms against its full sum
      if (p.closed_form == "remark39")
        cf[s] = stable ? op_norm(remark39_stable(x, y, p.n_max) - remark39_stable(x, y))
                       : op_norm(remark39_unstable(x, y, p.n_max) - remark39_unstable(x, y));
      pairs[s] = {std::move(x), std::move(y)};
    });
    double worst_cf = 0;
    long converged = 0;
    for (std::size_t s = 0; s < P; ++s) {
      csv.row({long(s), std::string(name), res[s].truncation_n, long(res[s].converged), res[s].residual, cf[s]});
      converged += res[s].converged;
      if (std::isfinite(cf[s])) worst_cf = std::max(worst_cf, cf[s]);
    }
    Json side;
    side["converged"] = converged;
    if (converged == long(P)) side["equivariance_residual"] = equivariance_residual(c, limit_provider(c, p.n_max, p.tol, stable), pairs);
    else out.notes.push_back(std::string(name) + " equivariance skipped: some truncations did not converge");
    if (p.closed_form == "remark39") {
      side["max_closed_form_truncation_error"] = worst_cf;
      side["closed_form_equivariance_residual"] = equivariance_residual(c, remark39_provider(stable), pairs);
    }
    out.summary[name] = side;
  }
  out.add("holonomy.csv", csv.str());
  return out;
}

// ---- pinching ----

struct PinchingParams {
  Word period_word, splice;
  std::string provider = "limit";
  double tol = 1e-8, hol_tol = 1e-12;
  long n_max = 60, margin = 64;
  static PinchingParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    PinchingParams p;
    p.period_word = parse_word(f.str("period_word"));
    p.splice = parse_word(f.str("splice"));
    p.provider = f.choice("provider", {"limit", "remark39", "identity"}, p.provider);
    p.tol = f.positive("tol", f.num("tol", p.tol));
    p.hol_tol = f.positive("hol_tol", f.num("hol_tol", p.hol_tol));
    p.n_max = f.at_least("n_max", f.integer("n_max", p.n_max), 1);
    p.margin = f.at_least("margin", f.integer("margin", p.margin), 1);
    f.done();
    if (p.period_word.empty()) throw ConfigError("experiment.params.period_word: must not be empty");
    if (p.provider == "limit" && p.n_max > p.margin)
      throw ConfigError("experiment.params.n_max: must not exceed margin for limit holonomies");
    if (p.provider == "remark39" && cfg.cocycle.kind != "remark39")
      throw ConfigError("experiment.params.provider: remark39 holonomies need the remark39 cocycle");
    return p;
  }
};

inline std::string index_list(const std::vector<int>& v) {
  std::string s;
  for (int j : v) s += (s.empty() ? "" : " ") + std::to_string(j + 1);
  return s;
}

inline RunOutput pinching(const ExperimentConfig& cfg, const GibbsModel&, int) {
  auto p = PinchingParams::parse(cfg);
  const auto& c = cfg.cocycle;
  HolonomyProvider hs, hu;
  if (p.provider == "limit") {
    hs = limit_provider(c, p.n_max, p.hol_tol, true);
    hu = limit_provider(c, p.n_max, p.hol_tol, false);
  } else if (p.provider == "remark39") {
    hs = remark39_provider(true);
    hu = remark39_provider(false);
  } else {
    hs = hu = identity_provider(c.d);
  }
  auto r = pinching_twisting_check(c, hs, hu, p.period_word, p.splice, p.tol, p.margin);
  Csv ev({"j", "re", "im", "abs"});
  for (std::size_t j = 0; j < r.eigenvalues.size(); ++j)
    ev.row({long(j + 1), r.eigenvalues[j].real(), r.eigenvalues[j].imag(), std::abs(r.eigenvalues[j])});
  Csv tw({"U", "V", "sigma_min", "pass"});
  for (auto& t : r.twisting_checks) tw.row({index_list(t.U), index_list(t.V), t.sigma_min, long(t.pass)});
  RunOutput out;
  out.add("pinching_eigenvalues.csv", ev.str());
  out.add("twisting.csv", tw.str());
  out.summary["pinching"] = r.pinching;
  out.summary["verdict"] = r.verdict;
  out.summary["homoclinic_length"] = r.homoclinic_length;
  return out;
}

// ---- tower ----

struct TowerParams {
  int m = 0;
  double delta = 0;
  long budget = 1 << 20;
  bool verify = true;
  static TowerParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    TowerParams p;
    p.m = int(f.at_least("m", f.integer("m"), 1));
    p.delta = f.num("delta");
    if (!(p.delta > 0 && p.delta <= 1)) throw ConfigError(f.at("delta") + ": must be in (0,1]");
    p.budget = f.at_least("base_word_budget", f.integer("base_word_budget", p.budget), 1);
    p.verify = f.boolean("verify", p.verify);
    f.done();
    return p;
  }
};

inline RunOutput tower(const ExperimentConfig& cfg, const GibbsModel& g, int) {
  auto p = TowerParams::parse(cfg);
  auto t = build_tower(g, p.m, p.delta, std::uint64_t(p.budget));
  RunOutput out;
  Csv cols({"k", "column_mass"});
  PlotSeries s{{}, {}, "mu(B_k)"};
  for (long k = 1; k <= t.truncation; ++k) {
    cols.row({k, t.column_mass[std::size_t(k)]});
    s.x.push_back(double(k));
    s.y.push_back(t.column_mass[std::size_t(k)]);
  }
  Csv sum({"m", "delta", "word", "truncation", "mu_R", "coverage", "residual_measure", "tail_mass", "verified_disjoint",
           "verified_mu_R", "verified_coverage"});
  Csv::Cell disjoint = std::string("not checked"), vmu = std::nan(""), vcov = std::nan("");
  if (p.verify) {
    auto v = verify_tower(g, t);
    disjoint = long(v.disjoint);
    vmu = v.mu_R;
    vcov = v.coverage;
    out.summary["verified_disjoint"] = v.disjoint;
    out.summary["verified_coverage"] = v.coverage;
  }
  sum.row({long(p.m), p.delta, word_str(t.word), t.truncation, t.mu_R, t.coverage, t.residual_measure, t.tail_mass,
           disjoint, vmu, vcov});
  out.add("tower_columns.csv", cols.str());
  out.add("tower.csv", sum.str());
  if (!s.x.empty()) out.plot("tower_columns.svg", {s}, "semilogy", "first-return column masses", "k", "mu(B_k)");
  out.summary["coverage"] = t.coverage;
  out.summary["word"] = word_str(t.word);
  return out;
}

// ---- counterexample-subadditive ----

struct SubadditiveParams {
  int stages = 2;
  double delta = 0.45;
  std::function<double(long)> u;
  static SubadditiveParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    SubadditiveParams p;
    p.stages = int(f.at_least("stages", f.integer("stages", p.stages), 1));
    p.delta = f.num("delta", p.delta);
    if (!(p.delta > 0 && p.delta < 0.5)) throw ConfigError(f.at("delta") + ": must be in (0, 1/2)");
    p.u = f.has("u") ? parse_u(f.sub("u")) : parse_u(Fields(Json::object(), f.at("u")));
    f.done();
    return p;
  }
};

inline RunOutput subadditive(const ExperimentConfig& cfg, const GibbsModel& g, int) {
  auto p = SubadditiveParams::parse(cfg);
  auto ex = build_subadditive_counterexample(g, p.u, p.stages, p.delta);
  Csv csv({"stage", "n_i", "K", "word", "c_i", "integral", "f_support", "bad_measure", "u_value", "bad_set_inclusion",
           "certified", "failure"});
  bool all = true;
  for (auto& st : ex.stages) {
    csv.row({long(st.i), st.n_i, st.K, word_str(st.tower.word), st.c_i, st.integral, st.f_support, st.bad_measure,
             st.u_value, long(st.bad_set_inclusion), long(st.certified), st.failure});
    all = all && st.certified;
  }
  RunOutput out;
  out.add("subadditive.csv", csv.str());
  out.summary["certified"] = all;
  return out;
}

// ---- counterexample-sl2 ----

struct Sl2RunParams {
  double lambda = 0.2;
  std::vector<double> eps;
  std::optional<double> probe_eps;
  std::function<double(long)> u;
  Sl2Params sl2;
  static Sl2RunParams parse(const ExperimentConfig& cfg) {
    Fields f = params_of(cfg);
    Sl2RunParams p;
    p.lambda = f.positive("lambda", f.num("lambda", p.lambda));
    p.eps = f.nums("eps");
    if (p.eps.empty()) throw ConfigError(f.at("eps") + ": at least one stage required");
    double total = 0;
    for (double e : p.eps) {
      if (!(e > 0 && e <= 1)) throw ConfigError(f.at("eps") + ": entries must be in (0,1]");
      total += e;
    }
    if (total > 1) throw ConfigError(f.at("eps") + ": the sum must be <= 1");
    if (f.has("probe_eps")) p.probe_eps = f.positive("probe_eps", f.num("probe_eps"));
    p.u = f.has("u") ? parse_u(f.sub("u")) : parse_u(Fields(Json::object(), f.at("u")));
    p.sl2.K = int(f.at_least("K", f.integer("K", p.sl2.K), 6));
    p.sl2.delta = f.positive("delta", f.num("delta", p.sl2.delta));
    if (!(14 * p.sl2.delta < p.lambda)) throw ConfigError(f.at("delta") + ": need 14 delta < lambda");
    p.sl2.n_max = f.at_least("n_max", f.integer("n_max", p.sl2.n_max), 1);
    p.sl2.lyap_n = f.at_least("lyap_n", f.integer("lyap_n", p.sl2.lyap_n), 1);
    p.sl2.lyap_samples = f.at_least("lyap_samples", f.integer("lyap_samples", p.sl2.lyap_samples), 2);
    p.sl2.line_samples = f.at_least("line_samples", f.integer("line_samples", p.sl2.line_samples), 0);
    p.sl2.line_tol = f.positive("line_tol", f.num("line_tol", p.sl2.line_tol));
    f.done();
    return p;
  }
};

inline std::vector<Csv::Cell> stage_row(const StageRecord& r) {
  std::string fails;
  for (auto& s : r.failures) fails += (fails.empty() ? "" : "; ") + s;
  const bool mod = r.stage > 0;
  const RunPairRule* q = mod ? &r.cocycle.rules.back() : nullptr;
  return {long(r.stage), r.n, r.eps, r.eps_total, long(q ? q->opener_len : 0), long(q ? q->closer_len : 0),
          q ? q->gap : 0L, r.sup_distance, r.det_residual, r.pattern_measure, r.mu_A_lower, r.u_value,
          r.max_log_norm_A, r.log_norm_threshold, r.witness_error, r.lyap.exponents[0], r.lyap.stderr_[0],
          r.lyap_floor, r.lines.spread, r.lines.equivariance, r.earlier_recheck, long(r.accepted), fails};
}

inline RunOutput sl2(const ExperimentConfig& cfg, const GibbsModel& g, int workers) {
  auto p = Sl2RunParams::parse(cfg);
  p.sl2.workers = workers;
  const std::uint64_t seed = sub_seed(cfg.rng_seed, kSl2);
  std::vector<StageRecord> recs;
  recs.push_back(initial_stage_record(cfg.cocycle, g, p.lambda, sub_seed(seed, 0), p.sl2));
  for (std::size_t k = 0; k < p.eps.size(); ++k) {
    auto& prev = recs.back();
    recs.push_back(modify_stage(prev, g, p.lambda, p.eps[k], prev.n, p.u, sub_seed(seed, k + 1), p.sl2));
    if (!recs.back().accepted) {
      std::string f;
      for (auto& s : recs.back().failures) f += (f.empty() ? "" : "; ") + s;
      throw NumericRefusal("counterexample-sl2", "stage " + std::to_string(k + 1) + " failed its certificates: " + f);
    }
  }
  RunOutput out;
  Csv stages({"stage", "n", "eps", "eps_total", "opener_len", "closer_len", "gap", "sup_distance", "det_residual",
              "pattern_measure", "mu_A_lower", "u_value", "max_log_norm_A", "log_norm_threshold", "witness_error",
              "lambda_hat", "lambda_stderr", "lyap_floor", "line_spread", "line_equivariance", "earlier_recheck",
              "accepted", "failures"});
  Csv wit({"stage", "offset", "zeros_before", "zeros_after", "expected", "measured"});
  Csv lines({"stage", "label", "eu_x", "eu_y", "es_x", "es_y", "spread", "equivariance"});
  for (auto& r : recs) {
    stages.row(stage_row(r));
    for (auto& w : r.witnesses)
      wit.row({long(r.stage), w.offset, w.zeros_before, w.zeros_after, w.expected, w.measured});
    for (auto& s : r.lines.samples)
      lines.row({long(r.stage), s.label, s.eu(0), s.eu(1), s.es(0), s.es(1), s.spread, s.equivariance});
  }
  if (p.probe_eps) {
    Csv probe({"stage", "eps", "outcome", "operation", "reason"});
    const long st = long(recs.size());
    try {
      auto& prev = recs.back();
      auto r = modify_stage(prev, g, p.lambda, *p.probe_eps, prev.n, p.u, sub_seed(seed, std::uint64_t(st)), p.sl2);
      probe.row({st, *p.probe_eps, std::string(r.accepted ? "accepted" : "certificates failed"), std::string(""),
                 std::string("")});
    } catch (const NumericRefusal& e) {
      probe.row({st, *p.probe_eps, std::string("refused"), e.op, e.reason});
      out.notes.push_back("next stage (eps " + fmt17(*p.probe_eps) + ") refused: " + e.reason);
    }
    out.add("sl2_next_stage.csv", probe.str());
  }
  out.add("sl2_stages.csv", stages.str());
  out.add("sl2_witnesses.csv", wit.str());
  out.add("sl2_lines.csv", lines.str());
  out.add("sl2_cocycle.json", cocycle_json(recs.back().cocycle).dump(1) + "\n");
  out.summary["stages"] = long(recs.size()) - 1;
  out.summary["n"] = recs.back().n;
  out.summary["sup_distance"] = recs.back().sup_distance;
  return out;
}

}  // namespace run

struct KindEntry {
  std::string name;
  std::function<void(const ExperimentConfig&)> validate;
  std::function<RunOutput(const ExperimentConfig&, const GibbsModel&, int)> run;
};

inline const std::vector<KindEntry>& kind_table() {
  static const std::vector<KindEntry> t{
      {"lyapunov", [](auto& c) { run::LyapunovParams::parse(c); }, run::lyapunov},
      {"flags", [](auto& c) { run::FlagsParams::parse(c); }, run::flags},
      {"pesin", [](auto& c) { run::PesinParams::parse(c); }, run::pesin},
      {"deviations", [](auto& c) { run::DeviationParams::parse(c); }, run::deviations},
      {"returns", [](auto& c) { run::ReturnParams::parse(c); }, run::returns},
      {"holonomy", [](auto& c) { run::HolonomyParams::parse(c); }, run::holonomy},
      {"pinching", [](auto& c) { run::PinchingParams::parse(c); }, run::pinching},
      {"tower", [](auto& c) { run::TowerParams::parse(c); }, run::tower},
      {"counterexample-subadditive", [](auto& c) { run::SubadditiveParams::parse(c); }, run::subadditive},
      {"counterexample-sl2", [](auto& c) { run::Sl2RunParams::parse(c); }, run::sl2},
  };
  return t;
}

inline const KindEntry& kind_entry(const std::string& kind) {
  for (auto& k : kind_table())
    if (k.name == kind) return k;
  throw ConfigError("experiment.kind: unknown kind \"" + kind + "\"");
}

inline void validate_experiment(const ExperimentConfig& cfg) { kind_entry(cfg.kind).validate(cfg); }

// Computes everything in memory; nothing touches output_dir.
inline RunOutput compute_experiment(const ExperimentConfig& cfg, int workers) {
  validate_experiment(cfg);
  auto g = build_gibbs(cfg.subshift, cfg.potential);
  return kind_entry(cfg.kind).run(cfg, g, workers);
}

inline RunOutput run_experiment(const ExperimentConfig& cfg, int workers) {
  auto out = compute_experiment(cfg, workers);
  commit_output(cfg, out);
  return out;
}

}  // namespace clab
