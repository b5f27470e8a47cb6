#pragma once
#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "gibbs.hpp"
#include "symbolic.hpp"

namespace clab {

// A set of points given by a deterministic automaton reading x_start .. x_{start+len-1}
// left to right. States are int64; step returns kDead to reject. Finite unions of
// cylinders are the special case of a trie, but return-time sets need windows far
// too long to list their words.
struct PatternSet {
  static constexpr std::int64_t kDead = -1;
  long start = 0;
  long len = 0;
  std::int64_t init = 0;
  std::function<std::int64_t(long pos, std::int64_t state, Symbol a)> step;
  std::function<bool(std::int64_t)> accept;

  long first() const { return start; }
  long last() const { return start + len - 1; }

  bool contains(const PointWindow& x) const {
    if (len > 0 && !x.covers(first(), last())) throw NumericRefusal("PatternSet::contains", "window does not cover the set's range");
    std::int64_t q = init;
    for (long p = first(); p <= last() && q != kDead; ++p) q = step(p, q, x.at(p));
    return q != kDead && accept(q);
  }
};

inline PatternSet everything_set() {
  PatternSet s;
  s.step = [](long, std::int64_t q, Symbol) { return q; };
  s.accept = [](std::int64_t) { return true; };
  return s;
}

inline PatternSet empty_set() {
  PatternSet s = everything_set();
  s.accept = [](std::int64_t) { return false; };
  return s;
}

// T^t(S): x in T^t S iff T^{-t}x in S, and (T^{-t}x)_i = x_{i-t}.
inline PatternSet shift_pattern(const PatternSet& s, long t) {
  PatternSet out = s;
  out.start = s.start - t;
  out.step = [f = s.step, t](long pos, std::int64_t q, Symbol a) { return f(pos + t, q, a); };
  return out;
}

inline PatternSet pattern_from_cylinders(const CylinderSet& c, int alphabet) {
  if (c.empty()) return empty_set();
  // trie over the words; node 0 is the root
  auto trie = std::make_shared<std::vector<std::int64_t>>(std::size_t(alphabet), PatternSet::kDead);
  auto depth = std::make_shared<std::vector<int>>(1, 0);
  for (auto& w : c.words) {
    std::int64_t q = 0;
    for (Symbol a : w) {
      auto& slot = (*trie)[std::size_t(q) * alphabet + a];
      if (slot == PatternSet::kDead) {
        slot = std::int64_t(depth->size());
        depth->push_back((*depth)[q] + 1);
        trie->resize(trie->size() + alphabet, PatternSet::kDead);
      }
      q = (*trie)[std::size_t(q) * alphabet + a];
    }
  }
  PatternSet s;
  s.start = c.base;
  s.len = c.len;
  s.step = [trie, alphabet](long, std::int64_t q, Symbol a) { return (*trie)[std::size_t(q) * alphabet + a]; };
  s.accept = [depth, n = c.len](std::int64_t q) { return (*depth)[q] == n; };
  return s;
}

namespace detail {

// succ[u * A + a]: chain state after appending a to state u, -1 if not allowed.
inline std::vector<int> chain_successors(const GibbsModel& g) {
  const int A = g.spec.alphabet_size, S = g.num_states();
  std::vector<int> succ(std::size_t(S) * A, -1);
  for (int u = 0; u < S; ++u)
    for (int a = 0; a < A; ++a) {
      if (!g.spec.allowed(g.last_symbol(u), Symbol(a))) continue;
      Word v(g.states[u].begin() + 1, g.states[u].end());
      v.push_back(Symbol(a));
      succ[std::size_t(u) * A + a] = g.state_of(v.data());
    }
  return succ;
}

constexpr std::size_t kMaxSets = 8;
using WalkKey = std::array<std::int64_t, kMaxSets + 1>;  // [chain state, q_1, ..., q_m]

template <class V>
struct Layer {
  std::vector<WalkKey> keys;
  std::vector<V> vals;
};

template <class V>
void merge_layer(Layer<V>& L) {
  std::vector<std::size_t> idx(L.keys.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return L.keys[a] != L.keys[b] ? L.keys[a] < L.keys[b] : a < b;
  });
  Layer<V> out;
  out.keys.reserve(idx.size());
  out.vals.reserve(idx.size());
  for (std::size_t i : idx) {
    if (!out.keys.empty() && out.keys.back() == L.keys[i]) {
      if constexpr (std::is_same_v<V, bool>) out.vals.back() = out.vals.back() || L.vals[i];
      else out.vals.back() += L.vals[i];
    } else {
      out.keys.push_back(L.keys[i]);
      out.vals.push_back(L.vals[i]);
    }
  }
  L = std::move(out);
}

// Runs all automata on the same point over the union of their windows, weighting paths
// by the Gibbs chain (V = double) or by admissibility only (V = bool). Returns the
// total weight of paths whose final accept flags satisfy keep. With prune_any a path
// is dropped once any automaton rejects (intersections), otherwise once all do.
// Live states per layer are refused beyond state_cap.
template <class V>
V product_walk(const GibbsModel& g, const std::vector<PatternSet>& sets,
               const std::function<bool(const std::vector<bool>&)>& keep, bool prune_any, std::uint64_t state_cap) {
  const int A = g.spec.alphabet_size, k = g.order - 1;
  const std::size_t m = sets.size();
  if (m == 0 || m > kMaxSets) throw ConfigError("pattern product: between 1 and 8 sets");
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  for (auto& s : sets)
    if (s.len > 0) {
      lo = std::min(lo, s.first());
      hi = std::max(hi, s.last());
    }
  auto finish = [&](const WalkKey& key) {
    std::vector<bool> acc(m);
    for (std::size_t j = 0; j < m; ++j) acc[j] = key[j + 1] != PatternSet::kDead && sets[j].accept(key[j + 1]);
    return keep(acc);
  };
  WalkKey start{};
  for (std::size_t j = 0; j < m; ++j) start[j + 1] = sets[j].init;
  if (lo > hi) {
    if constexpr (std::is_same_v<V, bool>) return finish(start);
    else return finish(start) ? 1.0 : 0.0;
  }
  auto advance = [&](WalkKey& key, long pos, Symbol a) {
    std::size_t dead = 0;
    for (std::size_t j = 0; j < m; ++j) {
      auto& s = sets[j];
      if (key[j + 1] != PatternSet::kDead && s.len > 0 && pos >= s.first() && pos <= s.last())
        key[j + 1] = s.step(pos, key[j + 1], a);
      if (key[j + 1] == PatternSet::kDead) ++dead;
    }
    return prune_any ? dead == 0 : dead < m;
  };
  Layer<V> cur;
  // the first k symbols come from the stationary state distribution
  const long span = hi - lo + 1;
  for (int u = 0; u < g.num_states(); ++u) {
    WalkKey key = start;
    key[0] = u;
    bool alive = true;
    for (int t = 0; t < k && t < span && alive; ++t) alive = advance(key, lo + t, g.states[u][t]);
    if (!alive) continue;
    cur.keys.push_back(key);
    if constexpr (std::is_same_v<V, bool>) cur.vals.push_back(true);
    else cur.vals.push_back(g.stationary[u]);
  }
  merge_layer(cur);
  const auto succ = chain_successors(g);
  for (long pos = lo + k; pos <= hi; ++pos) {
    Layer<V> nxt;
    nxt.keys.reserve(cur.keys.size() * A);
    nxt.vals.reserve(cur.keys.size() * A);
    for (std::size_t e = 0; e < cur.keys.size(); ++e) {
      const int u = int(cur.keys[e][0]);
      for (int a = 0; a < A; ++a) {
        const int v = succ[std::size_t(u) * A + a];
        if (v < 0) continue;
        WalkKey key = cur.keys[e];
        key[0] = v;
        if (!advance(key, pos, Symbol(a))) continue;
        nxt.keys.push_back(key);
        if constexpr (std::is_same_v<V, bool>) nxt.vals.push_back(true);
        else nxt.vals.push_back(cur.vals[e] * g.P(u, v));
      }
    }
    merge_layer(nxt);
    if (nxt.keys.size() > state_cap) throw SizeCapExceeded("pattern product", nxt.keys.size(), state_cap);
    cur = std::move(nxt);
  }
  V total{};
  for (std::size_t e = 0; e < cur.keys.size(); ++e)
    if (finish(cur.keys[e])) {
      if constexpr (std::is_same_v<V, bool>) total = true;
      else total += cur.vals[e];
    }
  return total;
}

}  // namespace detail

inline double pattern_measure(const GibbsModel& g, const PatternSet& s, std::uint64_t state_cap = size_cap()) {
  return detail::product_walk<double>(g, {s}, [](const std::vector<bool>& a) { return bool(a[0]); }, true, state_cap);
}

// measure of the union of the sets
inline double union_measure(const GibbsModel& g, const std::vector<PatternSet>& sets,
                            std::uint64_t state_cap = size_cap()) {
  return detail::product_walk<double>(
      g, sets, [](const std::vector<bool>& a) { return std::find(a.begin(), a.end(), true) != a.end(); }, false, state_cap);
}

// Exact emptiness (admissible points only, so empty iff measure zero for a Gibbs measure).
inline bool intersection_empty(const GibbsModel& g, const PatternSet& a, const PatternSet& b,
                               std::uint64_t state_cap = size_cap()) {
  return !detail::product_walk<bool>(g, {a, b}, [](const std::vector<bool>& f) { return f[0] && f[1]; }, true, state_cap);
}

}  // namespace clab
