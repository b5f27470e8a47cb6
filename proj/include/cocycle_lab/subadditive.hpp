#pragma once
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "deviation.hpp"
#include "tower.hpp"

namespace clab {

// Stage i: f_i = -c_i on the first `f_levels` levels of each height-K block of the tower,
// so S_{n_i} f_i = -c_i n_i on the first `bad_levels` levels.
struct SubadditiveStage {
  int i = 1;
  long n_i = 0;
  long K = 0;
  TowerSet tower;
  double c_i = 0;
  long f_levels = 0;    // K / 2^{i+1}
  long bad_levels = 0;  // K / 2^{i+2} = n_i
  double u_value = 0;   // u(n_i)
  // certificates
  double integral = 0;       // of f_i
  double f_support = 0;      // mu of the support of f_i
  double bad_measure = 0;    // mu of the first bad_levels levels
  double bad_from_tower = 0; // (K / 2^{i+2}) mu(R)
  bool bad_set_inclusion = false;
  bool certified = false;
  std::string failure;
};

struct SubadditiveCounterexample {
  std::vector<SubadditiveStage> stages;
  SubadditiveEvaluator a;
};

// x in T^k R for some k < levels (k < m): with t its level, k = t mod m and the block
// containing t must be complete.
inline bool in_tower_levels(const TowerLevel& lv, int m, long K, long levels) {
  if (!lv.found || lv.column > K) return false;
  const long r = lv.level % m;
  return r < levels && lv.column - (lv.level - r) >= m;
}

namespace detail {

// mu{x : pred(level, column)} = sum_k mu(B_k) #{t < k : pred(t, k)}
inline double level_set_measure(const TowerSet& t, const std::function<bool(long, long)>& pred) {
  double acc = 0;
  for (long k = 1; k <= t.truncation; ++k) {
    long cnt = 0;
    for (long lv = 0; lv < k; ++lv) cnt += pred(lv, k);
    acc += double(cnt) * t.column_mass[std::size_t(k)];
  }
  return acc;
}

inline void certify_stage(SubadditiveStage& st) {
  const int m = int(st.K);
  const long Kt = st.tower.truncation;
  auto in_f = [&](long lv, long col) { return in_tower_levels({true, col, lv}, m, Kt, st.f_levels); };
  auto in_bad = [&](long lv, long col) { return in_tower_levels({true, col, lv}, m, Kt, st.bad_levels); };
  st.f_support = level_set_measure(st.tower, in_f);
  st.c_i = std::ldexp(1.0, -st.i) / st.f_support;
  st.integral = -st.c_i * st.f_support;
  st.bad_measure = level_set_measure(st.tower, in_bad);
  st.bad_from_tower = double(st.bad_levels) * st.tower.mu_R;
  // every bad point stays in the support of f_i for n_i steps (same column)
  st.bad_set_inclusion = true;
  for (long k = 1; k <= Kt && st.bad_set_inclusion; ++k)
    for (long lv = 0; lv < k && st.bad_set_inclusion; ++lv) {
      if (!in_bad(lv, k)) continue;
      for (long j = 0; j < st.n_i; ++j)
        if (lv + j >= k || !in_f(lv + j, k)) {
          st.bad_set_inclusion = false;
          break;
        }
    }
  auto fail = [&](const std::string& s) {
    if (st.failure.empty()) st.failure = s;
  };
  if (!(std::abs(st.integral + std::ldexp(1.0, -st.i)) <= 1e-12)) fail("integral of f_i");
  if (!(st.c_i >= 2)) fail("c_i >= 2");
  if (!st.bad_set_inclusion) fail("bad-set inclusion");
  if (!(st.bad_measure >= st.u_value)) fail("bad-set measure >= u(n_i)");
  if (!(std::abs(st.bad_measure - st.bad_from_tower) <= 1e-12)) fail("bad-set measure vs tower");
  st.certified = st.failure.empty();
}

}  // namespace detail

// a(n,x) = n + sum_{i : n_i <= n} S_n f_i(x).
inline SubadditiveCounterexample build_subadditive_counterexample(const GibbsModel& g,
                                                                 const std::function<double(long)>& u, int stages,
                                                                 double delta = 0.45, long n_search_max = 1 << 24) {
  if (stages < 1) throw ConfigError("subadditive counterexample: stages must be >= 1");
  if (!(delta > 0 && delta < 0.5)) throw ConfigError("subadditive counterexample: tower delta must be in (0, 1/2)");
  SubadditiveCounterexample out;
  long prev = 0;
  for (int i = 1; i <= stages; ++i) {
    SubadditiveStage st;
    st.i = i;
    const double target = std::ldexp(1.0, -i - 3);
    long n = prev + 1;
    for (;; ++n) {
      if (n > n_search_max) throw ConfigError("subadditive counterexample: u does not reach 2^{-i-3}");
      const double v = u(n);
      if (!(v > 0)) throw ConfigError("subadditive counterexample: u must be positive");
      if (v <= target) break;
    }
    st.n_i = n;
    st.u_value = u(n);
    st.K = (long(1) << (i + 2)) * n;
    st.f_levels = st.K >> (i + 1);
    st.bad_levels = st.K >> (i + 2);
    try {
      st.tower = build_tower(g, int(st.K), delta);
    } catch (const NumericRefusal& e) {
      throw NumericRefusal("subadditive counterexample", "tower construction failed at stage " + std::to_string(i) +
                                                              ": " + e.reason);
    }
    detail::certify_stage(st);
    prev = n;
    out.stages.push_back(std::move(st));
  }
  auto stg = std::make_shared<std::vector<SubadditiveStage>>(out.stages);
  long reach = 0, L = 0;
  for (auto& s : *stg) {
    reach = std::max(reach, s.tower.truncation);
    L = std::max(L, long(s.tower.word.size()));
  }
  out.a.reach_left = reach;
  out.a.reach_right = reach + L - 1;
  out.a.a = [stg](long n, const PointWindow& x) {
    double v = double(n);
    for (auto& s : *stg) {
      if (s.n_i > n) continue;
      long cnt = 0;
      for (auto& lv : tower_levels(s.tower, x, 0, n)) cnt += in_tower_levels(lv, int(s.K), s.tower.truncation, s.f_levels);
      v -= s.c_i * double(cnt);
    }
    return v;
  };
  return out;
}

}  // namespace clab
