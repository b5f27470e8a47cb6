#include <gtest/gtest.h>

#include <cocycle_lab/gibbs.hpp>

using namespace clab;

namespace {

const double kGolden = (1 + std::sqrt(5.0)) / 2;

struct Case {
  SubshiftSpec spec;
  PotentialTable phi;
};

std::vector<Case> corpus() {
  auto f2 = SubshiftSpec::full(2), g = SubshiftSpec::golden_mean(), f3 = SubshiftSpec::full(3);
  auto c3 = SubshiftSpec(3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  return {
      {f2, PotentialTable::constant(f2, 1, 0.0)},
      {f2, PotentialTable::bernoulli(f2, {1.0 / 3, 2.0 / 3})},
      {g, PotentialTable::constant(g, 1, 0.0)},
      {f2, PotentialTable::from_map(f2, 2, {{"00", 0.3}, {"01", -0.2}, {"10", 0.1}, {"11", 0.7}})},
      {g, PotentialTable::from_map(g, 3, {{"000", 0.1}, {"001", 0.4}, {"010", -0.3}, {"100", 0.0}, {"101", 0.2}})},
      {f3, PotentialTable::from_map(f3, 1, {{"0", 0.5}, {"1", -1.0}, {"2", 0.0}})},
      // periodic-ish: 3-cycle structure with period 2 in the induced graph
      {c3, PotentialTable::constant(c3, 2, 0.25)},
  };
}

// Wilson 95% interval
std::pair<double, double> wilson(double k, double n) {
  const double z = 1.959963984540054;
  double p = k / n, den = 1 + z * z / n;
  double c = (p + z * z / (2 * n)) / den, h = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den;
  return {c - h, c + h};
}

}  // namespace

TEST(Gibbs, FairCoin) {
  auto s = SubshiftSpec::full(2);
  auto g = build_gibbs(s, PotentialTable::constant(s, 1, 0.0));
  EXPECT_NEAR(g.pressure, std::log(2.0), 1e-13);
  EXPECT_NEAR(g.stationary[0], 0.5, 1e-13);
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) EXPECT_NEAR(g.P(u, v), 0.5, 1e-13);
  EXPECT_NEAR(cylinder_measure(g, parse_word("011")), 0.125, 1e-15);
}

TEST(Gibbs, BiasedCoin) {
  auto s = SubshiftSpec::full(2);
  auto phi = PotentialTable::bernoulli(s, {1.0 / 3, 2.0 / 3});
  auto g = build_gibbs(s, phi);
  EXPECT_NEAR(g.pressure, 0.0, 1e-13);
  EXPECT_NEAR(g.stationary[0], 1.0 / 3, 1e-13);
  EXPECT_NEAR(cylinder_measure(g, parse_word("010")), 2.0 / 27, 1e-15);
  // normalized potential: eigenfunction constant
  EXPECT_NEAR(g.eigenfunction[0], g.eigenfunction[1], 1e-12);
  EXPECT_NEAR(verify_gibbs_bounds(g, phi, 8), 1.0, 1e-12);
}

TEST(Gibbs, ParryMeasure) {
  auto s = SubshiftSpec::golden_mean();
  auto phi = PotentialTable::constant(s, 1, 0.0);
  auto g = build_gibbs(s, phi);
  EXPECT_NEAR(g.pressure, std::log(kGolden), 1e-13);
  // Parry: mu[1] = 1/(1+phi^2)
  EXPECT_NEAR(cylinder_measure(g, parse_word("1")), 1.0 / (1 + kGolden * kGolden), 1e-13);
  EXPECT_NEAR(cylinder_measure(g, parse_word("0")) + cylinder_measure(g, parse_word("1")), 1.0, 1e-13);
  EXPECT_EQ(cylinder_measure(g, parse_word("11")), 0.0);
  double C = verify_gibbs_bounds(g, phi, 8);
  EXPECT_GE(C, 1.0);
  EXPECT_TRUE(std::isfinite(C));
}

TEST(Gibbs, SingleStepBound) {
  auto s = SubshiftSpec::golden_mean();
  auto phi = PotentialTable::constant(s, 1, 0.0);
  auto g = build_gibbs(s, phi);
  std::vector<GibbsBoundRow> rows;
  double C = verify_gibbs_bounds(g, phi, 1, &rows);
  double want = 1.0;
  for (Symbol a : {0, 1}) {
    double r = cylinder_measure(g, Word{a}) / std::exp(-g.pressure);
    want = std::max({want, r, 1 / r});
  }
  EXPECT_DOUBLE_EQ(C, want);
  EXPECT_EQ(rows.size(), 2u);
}

TEST(Gibbs, NonTransitiveRejected) {
  auto s = SubshiftSpec(2, {1, 0, 0, 1});
  EXPECT_THROW(build_gibbs(s, PotentialTable::constant(s, 1, 0.0)), ConfigError);
}

TEST(Gibbs, ModelInvariants) {
  for (auto& c : corpus()) {
    auto g = build_gibbs(c.spec, c.phi);
    const int S = g.num_states();
    for (int u = 0; u < S; ++u) {
      double row = 0, brow = 0, col = 0;
      for (int v = 0; v < S; ++v) {
        row += g.P(u, v);
        brow += g.B(u, v);
        col += g.stationary[v] * g.P(v, u);
        EXPECT_NEAR(g.B(v, u) * g.stationary[v], g.P(u, v) * g.stationary[u], 1e-12);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
      EXPECT_NEAR(brow, 1.0, 1e-12);
      EXPECT_NEAR(col, g.stationary[u], 1e-12);
      EXPECT_GT(g.eigenfunction[u], 0.0);
    }
    for (int n = 1; n <= 8; ++n) {
      double tot = 0;
      for (auto& w : enumerate_words(c.spec, n)) {
        double m = cylinder_measure(g, w);
        tot += m;
        double ext = 0, pre = 0;
        for (int a = 0; a < c.spec.alphabet_size; ++a) {
          Word wa = w, aw{Symbol(a)};
          wa.push_back(Symbol(a));
          aw.insert(aw.end(), w.begin(), w.end());
          ext += cylinder_measure(g, wa);
          pre += cylinder_measure(g, aw);
        }
        EXPECT_NEAR(ext, m, 1e-12);
        EXPECT_NEAR(pre, m, 1e-12);
      }
      EXPECT_NEAR(tot, 1.0, 1e-12);
    }
    double C = verify_gibbs_bounds(g, c.phi, 6);
    EXPECT_GE(C, 1.0);
  }
}

TEST(Gibbs, NormalizedPotentialHasZeroPressure) {
  auto s = SubshiftSpec::golden_mean();
  auto phi = PotentialTable::from_map(s, 2, {{"00", 0.2}, {"01", -0.4}, {"10", 0.3}});
  auto g = build_gibbs(s, phi);
  // log P(u,v) is a normalized potential of range 2
  PotentialTable norm = phi;
  for (auto& w : enumerate_words(s, 2)) norm.values[PotentialTable::code(w.data(), 2, 2)] = std::log(g.P(w[0], w[1]));
  auto g2 = build_gibbs(s, norm);
  EXPECT_NEAR(g2.pressure, 0.0, 1e-12);
  EXPECT_NEAR(g2.eigenfunction[0], g2.eigenfunction[1], 1e-10);
}

TEST(Gibbs, SamplerFairCoinMarginal) {
  auto s = SubshiftSpec::full(2);
  auto g = build_gibbs(s, PotentialTable::constant(s, 1, 0.0));
  Stream rng = derive_stream(42, 0);
  const int N = 100000;
  int zeros_neg = 0, zeros_pos = 0;
  for (int t = 0; t < N; ++t) {
    auto w = sample_two_sided(g, rng, 3, 3);
    zeros_neg += w.at(-3) == 0;
    zeros_pos += w.at(2) == 0;
  }
  const double sigma = std::sqrt(0.25 / N);
  EXPECT_NEAR(zeros_neg / double(N), 0.5, 3 * sigma);
  EXPECT_NEAR(zeros_pos / double(N), 0.5, 3 * sigma);
  auto single = sample_two_sided(g, rng, 0, 0);
  EXPECT_EQ(single.symbols.size(), 1u);
  EXPECT_EQ(single.first(), 0);
}

TEST(Gibbs, SamplerCylinderFrequencies) {
  for (auto& c : corpus()) {
    auto g = build_gibbs(c.spec, c.phi);
    Stream rng = derive_stream(43, 0);
    const int N = 40000;
    std::map<Word, int> counts;
    for (int t = 0; t < N; ++t) {
      auto w = sample_two_sided(g, rng, 4, 2);
      counts[Word(w.ptr(-3), w.ptr(-3) + 3)]++;
    }
    for (auto& w : enumerate_words(c.spec, 3)) {
      auto [lo, hi] = wilson(counts[w], N);
      double m = cylinder_measure(g, w);
      // 3-sigma-equivalent widening of the 95% band
      double pad = (hi - lo) * 0.25;
      EXPECT_GE(m, lo - pad) << word_str(w);
      EXPECT_LE(m, hi + pad) << word_str(w);
    }
  }
}
