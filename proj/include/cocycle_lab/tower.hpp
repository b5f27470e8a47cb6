#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "pattern_set.hpp"

namespace clab {

// Occurrence automaton for a word (KMP). delta[j*A + a] is the matched length after
// reading a with j symbols matched; a full match is reported as L and the caller
// continues from border.
struct WordMatcher {
  Word w;
  int A = 2;
  int border = 0;
  std::vector<int> delta;

  WordMatcher() = default;
  WordMatcher(Word word, int alphabet) : w(std::move(word)), A(alphabet) {
    const int L = int(w.size());
    std::vector<int> fail(std::size_t(L + 1), 0);
    for (int i = 1, j = 0; i < L; ++i) {
      while (j > 0 && w[i] != w[j]) j = fail[j];
      if (w[i] == w[j]) ++j;
      fail[i + 1] = j;
    }
    border = fail[L];
    delta.assign(std::size_t(L + 1) * A, 0);
    for (int j = 0; j <= L; ++j)
      for (int a = 0; a < A; ++a) {
        int k = j == L ? border : j;
        while (k > 0 && w[k] != a) k = fail[k];
        if (w[k] == a) ++k;
        delta[std::size_t(j) * A + a] = k;
      }
  }
  int length() const { return int(w.size()); }
  int next(int j, Symbol a) const { return delta[std::size_t(j) * A + a]; }
};

// Kakutani skyscraper over B = [w] at coordinate 0: columns B_k (first return time k),
// each cut into blocks of m levels. R collects the bottom level of every full block.
struct TowerSet {
  int m = 1;
  PatternSet base;  // R
  double mu_R = 0, coverage = 0, residual_measure = 1;
  Word word;                        // empty for the whole-space and empty towers
  long truncation = 0;              // K: columns of height > K are dropped
  std::vector<double> column_mass;  // [k] = mu(B_k), k = 0..K (index 0 unused)
  double tail_mass = 0;             // sum_{k>K} k mu(B_k)
};

// Level of x in the skyscraper: last visit p <= 0 and first visit q >= 1 to [w].
struct TowerLevel {
  bool found = false;
  long column = 0;  // q - p
  long level = 0;   // -p
};

inline TowerLevel tower_level(const TowerSet& t, const PointWindow& x) {
  TowerLevel r;
  const long L = long(t.word.size()), K = t.truncation;
  if (L == 0) return r;
  if (!x.covers(-K, K + L - 1)) throw NumericRefusal("tower_level", "window does not cover [-K, K+L-1]");
  auto at = [&](long s) { return std::equal(t.word.begin(), t.word.end(), x.ptr(s)); };
  long p = 1;
  for (long s = 0; s >= -K; --s)
    if (at(s)) {
      p = s;
      break;
    }
  if (p == 1) return r;
  for (long s = 1; s <= p + K; ++s)
    if (at(s)) {
      r.found = true;
      r.column = s - p;
      r.level = -p;
      return r;
    }
  return r;
}

// tower_level at T^j x for every j in [from, to), from one scan of the window.
inline std::vector<TowerLevel> tower_levels(const TowerSet& t, const PointWindow& x, long from, long to) {
  std::vector<TowerLevel> out(std::size_t(std::max(0L, to - from)));
  const long L = long(t.word.size()), K = t.truncation;
  if (L == 0 || to <= from) return out;
  if (!x.covers(from - K, to - 1 + K + L - 1)) throw NumericRefusal("tower_levels", "window too small");
  const long a = from - K, b = to - 1 + K;  // candidate occurrence starts
  std::vector<char> occ(std::size_t(b - a + 1), 0);
  for (long s = a; s <= b; ++s) occ[std::size_t(s - a)] = std::equal(t.word.begin(), t.word.end(), x.ptr(s));
  std::vector<long> prev(occ.size()), next(occ.size());
  long last = a - 1;
  for (long s = a; s <= b; ++s) prev[std::size_t(s - a)] = last = occ[std::size_t(s - a)] ? s : last;
  long nx = b + 1;
  for (long s = b; s >= a; --s) next[std::size_t(s - a)] = nx = occ[std::size_t(s - a)] ? s : nx;
  for (long j = from; j < to; ++j) {
    const long p = prev[std::size_t(j - a)];
    if (p < j - K) continue;
    const long q = j + 1 <= b ? next[std::size_t(j + 1 - a)] : b + 1;
    if (q > p + K) continue;
    auto& r = out[std::size_t(j - from)];
    r.found = true;
    r.column = q - p;
    r.level = j - p;
  }
  return out;
}

namespace detail {

// R as an automaton over [-K, K+L-1]: track the last occurrence start p <= 0, then accept
// at the first occurrence q >= 1 iff m | -p, q >= m and q - p <= K.
inline PatternSet return_time_base(const Word& w, int alphabet, int m, long K) {
  auto mt = std::make_shared<WordMatcher>(w, alphabet);
  const long L = long(w.size()), P = K + 2;  // p index: p + K, or K + 1 for none
  constexpr std::int64_t kAccept = std::numeric_limits<std::int64_t>::max();
  PatternSet s;
  s.start = -K;
  s.len = 2 * K + L;
  s.init = K + 1;
  s.step = [mt, L, P, K, m](long pos, std::int64_t q, Symbol a) -> std::int64_t {
    if (q == kAccept) return q;
    int j = int(q / P);
    std::int64_t pi = q % P;
    j = mt->next(j, a);
    if (j == L) {
      j = mt->border;
      const long occ = pos - L + 1;
      if (occ <= 0) {
        pi = occ + K;
      } else {
        if (pi == K + 1) return PatternSet::kDead;
        const long p = pi - K;
        return ((-p) % m == 0 && occ >= m && occ - p <= K) ? kAccept : PatternSet::kDead;
      }
    }
    return std::int64_t(j) * P + pi;
  };
  s.accept = [](std::int64_t q) { return q == kAccept; };
  return s;
}

// mu(B_k) for k = 1.. until sum k mu(B_k) >= 1 - tail_target or k > k_max.
inline std::vector<double> first_return_masses(const GibbsModel& g, const Word& w, double tail_target, long k_max,
                                               double& tail) {
  const int A = g.spec.alphabet_size, k = g.order - 1, L = int(w.size());
  if (L < k) throw ConfigError("build_tower: base word shorter than the chain memory");
  WordMatcher mt(w, A);
  const auto succ = chain_successors(g);
  const int S = g.num_states();
  std::vector<double> cur(std::size_t(S) * (L + 1), 0.0), nxt(cur.size());
  cur[std::size_t(g.state_of(w.data() + (L - k))) * (L + 1) + mt.border] = cylinder_measure(g, w);
  std::vector<double> mass{0.0};
  double covered = 0;
  for (long t = 1;; ++t) {
    std::fill(nxt.begin(), nxt.end(), 0.0);
    double hit = 0;
    for (int u = 0; u < S; ++u)
      for (int j = 0; j <= L; ++j) {
        const double p = cur[std::size_t(u) * (L + 1) + j];
        if (p == 0) continue;
        for (int a = 0; a < A; ++a) {
          const int v = succ[std::size_t(u) * A + a];
          if (v < 0) continue;
          const double pv = p * g.P(u, v);
          const int j2 = mt.next(j, Symbol(a));
          if (j2 == L) hit += pv;
          else nxt[std::size_t(v) * (L + 1) + j2] += pv;
        }
      }
    mass.push_back(hit);
    covered += double(t) * hit;
    std::swap(cur, nxt);
    tail = 1.0 - covered;
    if (tail <= tail_target) return mass;
    if (t >= k_max) throw NumericRefusal("build_tower", "truncation tail too heavy (tail " + std::to_string(tail) +
                                                           " after " + std::to_string(k_max) + " columns)");
  }
}

}  // namespace detail

inline TowerSet whole_space_tower() {
  TowerSet t;
  t.base = everything_set();
  t.mu_R = t.coverage = 1;
  t.residual_measure = 0;
  return t;
}

inline TowerSet build_tower(const GibbsModel& g, int m, double delta, std::uint64_t base_word_budget = 1 << 20,
                            long k_max = 1 << 20) {
  if (m < 1) throw ConfigError("build_tower: m must be >= 1");
  if (!(delta > 0 && delta <= 1)) throw ConfigError("build_tower: delta must be in (0,1]");
  if (!is_transitive(g.spec)) throw ConfigError("build_tower: subshift must be transitive");
  if (m == 1) return whole_space_tower();
  if (delta == 1) {
    TowerSet t;
    t.m = m;
    t.base = empty_set();
    return t;
  }
  const double bound = delta / (2.0 * m);
  std::uint64_t examined = 0;
  Word best;
  for (int L = std::max(1, g.order - 1); best.empty(); ++L) {
    const std::uint64_t cnt = count_words(g.spec, L);
    if (examined + cnt > base_word_budget)
      throw NumericRefusal("build_tower", "no base word within budget achieves mu(B) <= delta/(2m)");
    examined += cnt;
    // largest admissible measure under the bound; among ties the least self-overlap,
    // which keeps return times short
    double best_mu = -1;
    int best_border = L;
    for (auto& w : enumerate_words(g.spec, L)) {
      const double mu = cylinder_measure(g, w);
      if (!(mu <= bound) || mu < best_mu) continue;
      const int border = WordMatcher(w, g.spec.alphabet_size).border;
      if (mu > best_mu || border < best_border) {
        best_mu = mu;
        best_border = border;
        best = w;
      }
    }
  }
  TowerSet t;
  t.m = m;
  t.word = best;
  t.column_mass = detail::first_return_masses(g, best, delta / 2, k_max, t.tail_mass);
  t.truncation = long(t.column_mass.size()) - 1;
  for (long k = 1; k <= t.truncation; ++k) t.mu_R += double(k / m) * t.column_mass[std::size_t(k)];
  t.coverage = double(m) * t.mu_R;
  t.residual_measure = 1.0 - t.coverage;
  t.base = detail::return_time_base(best, g.spec.alphabet_size, m, t.truncation);
  if (t.coverage < 1 - delta) throw NumericRefusal("build_tower", "coverage below 1 - delta");
  return t;
}

struct TowerVerdict {
  bool disjoint = false;
  double coverage = 0;
  double mu_R = 0;
};

// Independent check from R's membership automaton alone: R and T^j R disjoint for
// 0 < j < m (which gives all pairs by invariance), mu(R) by the chain walk.
inline TowerVerdict verify_tower(const GibbsModel& g, const PatternSet& R, int m, std::uint64_t state_cap = size_cap()) {
  if (m < 1) throw ConfigError("verify_tower: m must be >= 1");
  TowerVerdict v;
  v.mu_R = pattern_measure(g, R, state_cap);
  v.disjoint = true;
  for (int j = 1; j < m && v.disjoint; ++j) v.disjoint = intersection_empty(g, R, shift_pattern(R, j), state_cap);
  if (v.disjoint) {
    v.coverage = double(m) * v.mu_R;
  } else if (m <= 8) {
    std::vector<PatternSet> all;
    for (int j = 0; j < m; ++j) all.push_back(shift_pattern(R, j));
    v.coverage = union_measure(g, all, state_cap);
  } else {
    v.coverage = std::numeric_limits<double>::quiet_NaN();
  }
  return v;
}

inline TowerVerdict verify_tower(const GibbsModel& g, const TowerSet& t, std::uint64_t state_cap = size_cap()) {
  return verify_tower(g, t.base, t.m, state_cap);
}

}  // namespace clab
