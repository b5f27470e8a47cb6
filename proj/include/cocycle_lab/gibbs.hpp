#pragma once
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "symbolic.hpp"

namespace clab {

// phi(x) = values[code(x_0..x_{r-1})]; NaN marks inadmissible words.
struct PotentialTable {
  int range = 1;
  int alphabet = 0;
  std::vector<double> values;

  static std::size_t code(const Symbol* w, int r, int A) {
    std::size_t c = 0;
    for (int i = 0; i < r; ++i) c = c * A + w[i];
    return c;
  }
  double operator()(const Symbol* w) const { return values[code(w, range, alphabet)]; }

  static PotentialTable constant(const SubshiftSpec& s, int r, double v) {
    PotentialTable p{r, s.alphabet_size, {}};
    std::size_t n = 1;
    for (int i = 0; i < r; ++i) n *= s.alphabet_size;
    p.values.assign(n, std::nan(""));
    for_each_word(s, r, [&](const Word& w) { p.values[code(w.data(), r, s.alphabet_size)] = v; });
    return p;
  }
  // range-1 potential log p_a
  static PotentialTable bernoulli(const SubshiftSpec& s, const std::vector<double>& probs) {
    PotentialTable p{1, s.alphabet_size, {}};
    for (double q : probs) p.values.push_back(std::log(q));
    return p;
  }
  static PotentialTable from_map(const SubshiftSpec& s, int r, const std::map<std::string, double>& m) {
    if (r < 1 || r > 8) throw ConfigError("potential.range must be in [1,8]");
    PotentialTable p = constant(s, r, std::nan(""));
    for (auto& [k, v] : m) {
      Word w = parse_word(k);
      if (int(w.size()) != r) throw ConfigError("potential.values: word \"" + k + "\" has length != range");
      if (!s.admissible(w)) throw ConfigError("potential.values: word \"" + k + "\" is inadmissible");
      if (!std::isfinite(v)) throw ConfigError("potential.values: non-finite value for \"" + k + "\"");
      p.values[code(w.data(), r, s.alphabet_size)] = v;
    }
    bool missing = false;
    for_each_word(s, r, [&](const Word& w) {
      if (std::isnan(p.values[code(w.data(), r, s.alphabet_size)])) missing = true;
    });
    if (missing) throw ConfigError("potential.values: a value is required for every admissible word of length range");
    return p;
  }
};

// Stationary Markov chain on (s-1)-word states, s = max(range,2). A forward step
// appends one symbol and carries weight e^{phi} of the r-word ending at it.
struct GibbsModel {
  SubshiftSpec spec;
  int order = 2;  // s
  double pressure = 0.0;
  std::vector<Word> states;
  std::vector<int> state_index;  // by base-A code of the (s-1)-word, -1 if inadmissible
  std::vector<double> kernel;    // S x S row-major
  std::vector<double> backward;  // backward(v,u): prob that the state before v is u
  std::vector<double> stationary;
  std::vector<double> eigenfunction;
  std::vector<double> kernel_cdf, backward_cdf, stationary_cdf;

  int num_states() const { return int(states.size()); }
  int state_of(const Symbol* w) const { return state_index[PotentialTable::code(w, order - 1, spec.alphabet_size)]; }
  double P(int u, int v) const { return kernel[std::size_t(u) * states.size() + v]; }
  double B(int v, int u) const { return backward[std::size_t(v) * states.size() + u]; }
  // last symbol of a state (the one appended on a forward step)
  Symbol last_symbol(int u) const { return states[u].back(); }
  Symbol first_symbol(int u) const { return states[u].front(); }
};

namespace detail {

// Leading eigenvector of a nonnegative irreducible matrix by averaged power iteration.
inline std::vector<double> perron(const std::vector<double>& m, int n, bool transpose, double tol, int max_iter,
                                  double& rho) {
  std::vector<double> x(n, 1.0 / n), y(n);
  int polish = 256;
  auto apply = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (int i = 0; i < n; ++i) {
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += (transpose ? m[std::size_t(j) * n + i] : m[std::size_t(i) * n + j]) * in[j];
      out[i] = acc;
    }
  };
  for (int it = 0; it < max_iter; ++it) {
    apply(x, y);
    double sy = 0;
    for (double v : y) sy += v;
    rho = sy;  // x sums to 1
    double res = 0;
    for (int i = 0; i < n; ++i) res += std::abs(y[i] - rho * x[i]);
    if (res <= tol * rho && polish-- == 0) return x;
    // average with the previous iterate so periodic components die out
    double tot = 0;
    for (int i = 0; i < n; ++i) {
      x[i] = 0.5 * (x[i] + y[i] / rho);
      tot += x[i];
    }
    for (auto& v : x) v /= tot;
  }
  throw NumericRefusal("build_gibbs", "power iteration did not reach tolerance within max_iter");
}

inline std::vector<double> cdf_rows(const std::vector<double>& m, int n) {
  std::vector<double> c(m.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int j = 0; j < n; ++j) {
      acc += m[std::size_t(i) * n + j];
      c[std::size_t(i) * n + j] = acc;
    }
  }
  return c;
}

}  // namespace detail

inline GibbsModel build_gibbs(const SubshiftSpec& spec, const PotentialTable& phi, double tol = 1e-13,
                              int max_iter = 1000000) {
  if (!is_transitive(spec)) throw ConfigError("build_gibbs: subshift is not transitive");
  if (!(tol > 0)) throw ConfigError("build_gibbs: tol must be > 0");
  GibbsModel g;
  g.spec = spec;
  g.order = std::max(phi.range, 2);
  const int A = spec.alphabet_size, k = g.order - 1;
  g.states = enumerate_words(spec, k);
  std::size_t codes = 1;
  for (int i = 0; i < k; ++i) codes *= A;
  g.state_index.assign(codes, -1);
  for (int i = 0; i < g.num_states(); ++i) g.state_index[PotentialTable::code(g.states[i].data(), k, A)] = i;
  const int S = g.num_states();
  std::vector<double> L(std::size_t(S) * S, 0.0);
  for (int u = 0; u < S; ++u)
    for (int a = 0; a < A; ++a) {
      if (!spec.allowed(g.states[u].back(), a)) continue;
      Word w = g.states[u];
      w.push_back(Symbol(a));
      int v = g.state_of(w.data() + 1);
      L[std::size_t(u) * S + v] = std::exp(phi(w.data() + (g.order - phi.range)));
    }
  double rho = 0, rho2 = 0;
  std::vector<double> h = detail::perron(L, S, false, tol, max_iter, rho);
  std::vector<double> l = detail::perron(L, S, true, tol, max_iter, rho2);
  g.pressure = std::log(rho);
  double hmax = 0;
  for (double v : h) hmax = std::max(hmax, v);
  for (auto& v : h) v /= hmax;
  g.eigenfunction = h;
  g.kernel.assign(std::size_t(S) * S, 0.0);
  for (int u = 0; u < S; ++u) {
    double row = 0;
    for (int v = 0; v < S; ++v) row += g.kernel[std::size_t(u) * S + v] = L[std::size_t(u) * S + v] * h[v] / (rho * h[u]);
    for (int v = 0; v < S; ++v) g.kernel[std::size_t(u) * S + v] /= row;
  }
  g.stationary.resize(S);
  double tot = 0;
  for (int u = 0; u < S; ++u) tot += g.stationary[u] = l[u] * h[u];
  for (auto& v : g.stationary) v /= tot;
  // polish pi as the left fixed vector of the normalized kernel
  for (int it = 0; it < 64; ++it) {
    std::vector<double> nx(S, 0.0);
    for (int u = 0; u < S; ++u)
      for (int v = 0; v < S; ++v) nx[v] += g.stationary[u] * g.P(u, v);
    double t = 0;
    for (int v = 0; v < S; ++v) t += g.stationary[v] = 0.5 * (g.stationary[v] + nx[v]);
    for (auto& v : g.stationary) v /= t;
  }
  g.backward.assign(std::size_t(S) * S, 0.0);
  for (int v = 0; v < S; ++v) {
    double row = 0;
    for (int u = 0; u < S; ++u) row += g.backward[std::size_t(v) * S + u] = g.stationary[u] * g.P(u, v) / g.stationary[v];
    for (int u = 0; u < S; ++u) g.backward[std::size_t(v) * S + u] /= row;
  }
  g.kernel_cdf = detail::cdf_rows(g.kernel, S);
  g.backward_cdf = detail::cdf_rows(g.backward, S);
  g.stationary_cdf.resize(S);
  double acc = 0;
  for (int u = 0; u < S; ++u) g.stationary_cdf[u] = acc += g.stationary[u];
  return g;
}

inline double cylinder_measure(const GibbsModel& g, const Symbol* w, std::size_t n) {
  if (n == 0) return 1.0;
  if (!g.spec.admissible(w, n)) return 0.0;
  const int k = g.order - 1;
  if (int(n) < k) {
    double acc = 0;
    for (int u = 0; u < g.num_states(); ++u)
      if (std::equal(w, w + n, g.states[u].begin())) acc += g.stationary[u];
    return acc;
  }
  int u = g.state_of(w);
  double p = g.stationary[u];
  for (std::size_t j = k; j < n; ++j) {
    int v = g.state_of(w + j - k + 1);
    p *= g.P(u, v);
    u = v;
  }
  return p;
}
inline double cylinder_measure(const GibbsModel& g, const Word& w) { return cylinder_measure(g, w.data(), w.size()); }

inline double measure(const GibbsModel& g, const CylinderSet& c) {
  double acc = 0;
  for (auto& w : c.words) acc += cylinder_measure(g, w);
  return acc;
}

struct GibbsBoundRow {
  int n;
  Word word;
  double ratio;
};

inline double verify_gibbs_bounds(const GibbsModel& g, const PotentialTable& phi, int n_max,
                                  std::vector<GibbsBoundRow>* rows = nullptr, std::uint64_t cap = size_cap()) {
  const SubshiftSpec& s = g.spec;
  double C = 1.0;
  for (int n = 1; n <= n_max; ++n) {
    for (auto& w : enumerate_words(s, n, cap)) {
      Word x = w;
      bool periodic = s.allowed(w.back(), w.front());
      std::size_t j = 0;
      while (int(x.size()) < n + phi.range - 1) {
        if (periodic) {
          x.push_back(w[j++ % w.size()]);
        } else {
          int a = 0;
          while (!s.allowed(x.back(), a)) ++a;
          x.push_back(Symbol(a));
        }
      }
      double sn = 0;
      for (int i = 0; i < n; ++i) sn += phi(x.data() + i);
      double ratio = cylinder_measure(g, w) / std::exp(sn - n * g.pressure);
      C = std::max({C, ratio, 1.0 / ratio});
      if (rows) rows->push_back({n, w, ratio});
    }
  }
  return C;
}

inline int sample_state(const std::vector<double>& cdf, std::size_t row, int S, Stream& rng) {
  return rng.categorical(cdf.data() + row * S, S);
}

// Stationary two-sided chain on indices -left..right.
inline PointWindow sample_two_sided(const GibbsModel& g, Stream& rng, long left, long right) {
  const int k = g.order - 1, S = g.num_states();
  const long hi = std::max(right, long(k - 1));
  PointWindow w{-left, Word(std::size_t(hi + left + 1))};
  int u0 = rng.categorical(g.stationary_cdf.data(), S);
  for (int i = 0; i < k; ++i) w.symbols[std::size_t(left + i)] = g.states[u0][i];
  int u = u0;
  for (long j = k; j <= hi; ++j) {
    u = sample_state(g.kernel_cdf, u, S, rng);
    w.symbols[std::size_t(left + j)] = g.last_symbol(u);
  }
  u = u0;
  for (long j = -1; j >= -left; --j) {
    u = sample_state(g.backward_cdf, u, S, rng);
    w.symbols[std::size_t(left + j)] = g.first_symbol(u);
  }
  if (hi > right) w.symbols.resize(std::size_t(right + left + 1));
  return w;
}

}  // namespace clab
