#pragma once
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace clab {

using Symbol = std::uint8_t;
using Word = std::vector<Symbol>;

inline std::string word_str(const Word& w) {
  std::string s;
  for (Symbol a : w) s += (a < 10 ? char('0' + a) : char('a' + a - 10));
  return s;
}

inline Word parse_word(const std::string& s) {
  Word w;
  for (char ch : s) {
    if (ch >= '0' && ch <= '9') w.push_back(Symbol(ch - '0'));
    else if (ch >= 'a' && ch <= 'z') w.push_back(Symbol(ch - 'a' + 10));
    else throw ConfigError("bad symbol '" + std::string(1, ch) + "' in word \"" + s + "\"");
  }
  return w;
}

struct SubshiftSpec {
  int alphabet_size = 0;
  std::vector<std::uint8_t> table;  // row-major A x A

  SubshiftSpec() = default;
  SubshiftSpec(int a, std::vector<std::uint8_t> t) : alphabet_size(a), table(std::move(t)) { validate(); }

  bool allowed(int a, int b) const { return table[std::size_t(a) * alphabet_size + b] != 0; }

  void validate() const {
    if (alphabet_size < 1) throw ConfigError("subshift.alphabet_size must be >= 1");
    if (alphabet_size > 36) throw ConfigError("subshift.alphabet_size must be <= 36");
    if (table.size() != std::size_t(alphabet_size) * alphabet_size)
      throw ConfigError("subshift.transitions must be an A x A table");
    for (int a = 0; a < alphabet_size; ++a) {
      bool succ = false, pred = false;
      for (int b = 0; b < alphabet_size; ++b) {
        succ |= allowed(a, b);
        pred |= allowed(b, a);
      }
      if (!succ) throw ConfigError("subshift.transitions: symbol " + std::to_string(a) + " has no allowed successor");
      if (!pred) throw ConfigError("subshift.transitions: symbol " + std::to_string(a) + " has no allowed predecessor");
    }
  }

  bool admissible(const Symbol* w, std::size_t n) const {
    for (std::size_t i = 0; i < n; ++i)
      if (w[i] >= alphabet_size) return false;
    for (std::size_t i = 1; i < n; ++i)
      if (!allowed(w[i - 1], w[i])) return false;
    return true;
  }
  bool admissible(const Word& w) const { return admissible(w.data(), w.size()); }

  static SubshiftSpec full(int a) { return SubshiftSpec(a, std::vector<std::uint8_t>(std::size_t(a) * a, 1)); }
  static SubshiftSpec golden_mean() { return SubshiftSpec(2, {1, 1, 1, 0}); }
};

inline bool is_transitive(const SubshiftSpec& s) {
  const int A = s.alphabet_size;
  for (int a = 0; a < A; ++a) {
    std::vector<char> seen(A, 0);
    std::vector<int> stack{a};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < A; ++v)
        if (s.allowed(u, v) && !seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
    for (int b = 0; b < A; ++b)
      if (!seen[b]) return false;
  }
  return true;
}

// Sum of entries of table^(n-1), saturating at UINT64_MAX.
inline std::uint64_t count_words(const SubshiftSpec& s, int n) {
  const int A = s.alphabet_size;
  constexpr std::uint64_t kMax = ~std::uint64_t{0};
  std::vector<std::uint64_t> v(A, 1);
  for (int k = 1; k < n; ++k) {
    std::vector<std::uint64_t> nv(A, 0);
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < A; ++b)
        if (s.allowed(a, b)) nv[b] = (kMax - nv[b] < v[a]) ? kMax : nv[b] + v[a];
    v.swap(nv);
  }
  std::uint64_t tot = 0;
  for (auto x : v) tot = (kMax - tot < x) ? kMax : tot + x;
  return tot;
}

// Lexicographic DFS over admissible words of length n; fn(const Word&).
template <class F>
void for_each_word(const SubshiftSpec& s, int n, F&& fn) {
  if (n < 1) return;
  Word w(n, 0);
  const int A = s.alphabet_size;
  std::vector<int> next(n, 0);
  int pos = 0;
  next[0] = 0;
  while (pos >= 0) {
    int a = next[pos];
    while (a < A && pos > 0 && !s.allowed(w[pos - 1], a)) ++a;
    if (a >= A) {
      --pos;
      continue;
    }
    w[pos] = Symbol(a);
    next[pos] = a + 1;
    if (pos == n - 1) {
      fn(static_cast<const Word&>(w));
    } else {
      ++pos;
      next[pos] = 0;
    }
  }
}

inline std::vector<Word> enumerate_words(const SubshiftSpec& s, int n, std::uint64_t cap = size_cap()) {
  if (n < 1) throw ConfigError("enumerate_words: n must be >= 1");
  std::uint64_t cnt = count_words(s, n);
  if (cnt > cap) throw SizeCapExceeded("enumerate_words", cnt, cap);
  std::vector<Word> out;
  out.reserve(cnt);
  for_each_word(s, n, [&](const Word& w) { out.push_back(w); });
  return out;
}

inline std::vector<Word> periodic_words(const SubshiftSpec& s, int k, std::uint64_t cap = size_cap()) {
  std::vector<Word> out;
  for (auto& w : enumerate_words(s, k, cap))
    if (s.allowed(w.back(), w.front())) out.push_back(w);
  return out;
}

// Finite stand-in for a point: symbols at indices start..start+size-1.
struct PointWindow {
  long start = 0;
  Word symbols;

  long first() const { return start; }
  long last() const { return start + long(symbols.size()) - 1; }
  bool covers(long a, long b) const { return a >= first() && b <= last(); }
  Symbol at(long i) const { return symbols[std::size_t(i - start)]; }
  const Symbol* ptr(long i) const { return symbols.data() + (i - start); }
  bool operator==(const PointWindow&) const = default;
};

inline PointWindow shift_window(const PointWindow& w, long t) { return PointWindow{w.start - t, w.symbols}; }

// Bi-infinite repetition of a periodic word, restricted to [a,b], phase: index 0 holds w[0].
inline PointWindow periodic_window(const Word& w, long a, long b) {
  PointWindow out{a, {}};
  const long k = long(w.size());
  for (long i = a; i <= b; ++i) out.symbols.push_back(w[std::size_t(((i % k) + k) % k)]);
  return out;
}

// Union of cylinders [w] placed at base_index, all words of equal length; sorted, unique.
struct CylinderSet {
  long base = 0;
  int len = 0;
  std::vector<Word> words;

  void normalize() {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
  }
  bool empty() const { return words.empty(); }
  bool contains_word(const Word& w) const { return std::binary_search(words.begin(), words.end(), w); }
  bool contains(const PointWindow& x) const {
    if (!x.covers(base, base + len - 1)) throw NumericRefusal("CylinderSet::contains", "window does not cover cylinder range");
    Word w(x.ptr(base), x.ptr(base) + len);
    return contains_word(w);
  }
};

inline CylinderSet make_cylinder_set(long base, std::vector<Word> words, const SubshiftSpec& s) {
  CylinderSet c{base, words.empty() ? 0 : int(words[0].size()), std::move(words)};
  for (auto& w : c.words) {
    if (int(w.size()) != c.len) throw ConfigError("CylinderSet: words of unequal length");
    if (!s.admissible(w)) throw ConfigError("CylinderSet: inadmissible word " + word_str(w));
  }
  c.normalize();
  return c;
}

// T^t(C). x in T^t C iff T^{-t}x in C, and (T^{-t}x)_i = x_{i-t}.
inline CylinderSet shift_cylinders(const CylinderSet& c, long t) {
  CylinderSet out = c;
  out.base = c.base - t;
  return out;
}

// Re-express c on coordinates [base, base+len-1] (must contain c's range).
inline CylinderSet refine(const CylinderSet& c, const SubshiftSpec& s, long base, int len, std::uint64_t cap = size_cap()) {
  if (c.empty()) return CylinderSet{base, len, {}};
  const long off = c.base - base;
  if (off < 0 || off + c.len > len) throw NumericRefusal("refine", "target range does not contain the cylinder range");
  const int pre = int(off), post = len - int(off) - c.len;
  const int A = s.alphabet_size;
  std::uint64_t est = c.words.size();
  for (int i = 0; i < pre + post; ++i) {
    est *= std::uint64_t(A);
    if (est > cap) throw SizeCapExceeded("refine", est, cap);
  }
  std::vector<Word> out;
  std::vector<Word> prefixes = pre ? enumerate_words(s, pre, cap) : std::vector<Word>{Word{}};
  std::vector<Word> suffixes = post ? enumerate_words(s, post, cap) : std::vector<Word>{Word{}};
  for (auto& p : prefixes)
    for (auto& w : c.words) {
      if (!p.empty() && !s.allowed(p.back(), w.front())) continue;
      for (auto& q : suffixes) {
        if (!q.empty() && !s.allowed(w.back(), q.front())) continue;
        Word full = p;
        full.insert(full.end(), w.begin(), w.end());
        full.insert(full.end(), q.begin(), q.end());
        out.push_back(std::move(full));
      }
    }
  CylinderSet r{base, len, std::move(out)};
  r.normalize();
  return r;
}

inline std::pair<long, int> common_range(const CylinderSet& a, const CylinderSet& b) {
  if (a.empty()) return {b.base, b.len};
  if (b.empty()) return {a.base, a.len};
  long lo = std::min(a.base, b.base), hi = std::max(a.base + a.len, b.base + b.len);
  return {lo, int(hi - lo)};
}

inline CylinderSet set_union(const CylinderSet& a, const CylinderSet& b, const SubshiftSpec& s) {
  auto [lo, n] = common_range(a, b);
  CylinderSet ra = refine(a, s, lo, n), rb = refine(b, s, lo, n);
  CylinderSet out{lo, n, {}};
  std::set_union(ra.words.begin(), ra.words.end(), rb.words.begin(), rb.words.end(), std::back_inserter(out.words));
  return out;
}

inline CylinderSet set_intersection(const CylinderSet& a, const CylinderSet& b, const SubshiftSpec& s) {
  if (a.empty() || b.empty()) return CylinderSet{a.base, a.len, {}};
  auto [lo, n] = common_range(a, b);
  CylinderSet ra = refine(a, s, lo, n), rb = refine(b, s, lo, n);
  CylinderSet out{lo, n, {}};
  std::set_intersection(ra.words.begin(), ra.words.end(), rb.words.begin(), rb.words.end(),
                        std::back_inserter(out.words));
  return out;
}

inline CylinderSet set_complement(const CylinderSet& a, const SubshiftSpec& s, std::uint64_t cap = size_cap()) {
  auto all = enumerate_words(s, std::max(a.len, 1), cap);
  CylinderSet out{a.base, std::max(a.len, 1), {}};
  std::set_difference(all.begin(), all.end(), a.words.begin(), a.words.end(), std::back_inserter(out.words));
  return out;
}

}  // namespace clab
