#include <gtest/gtest.h>

#include <cocycle_lab/holonomy.hpp>

using namespace clab;

namespace {

const SubshiftSpec kFull2 = SubshiftSpec::full(2);

PointWindow random_window(Stream& rng, long a, long b) {
  PointWindow w{a, {}};
  for (long i = a; i <= b; ++i) w.symbols.push_back(Symbol(rng.next_u64() & 1));
  return w;
}

// y agrees with x on coordinates >= from (stable) or <= to (unstable), random elsewhere
PointWindow partner(Stream& rng, const PointWindow& x, bool stable, long cut) {
  PointWindow y = x;
  for (long i = x.first(); i <= x.last(); ++i)
    if (stable ? i < cut : i > cut) y.symbols[std::size_t(i - x.first())] = Symbol(rng.next_u64() & 1);
  return y;
}

}  // namespace

TEST(Holonomy, BunchingExamples) {
  auto id = bunching_margin(identity_cocycle(kFull2, 2), 0.5, 1.0, 4);
  EXPECT_DOUBLE_EQ(id.margin, 0.5);
  EXPECT_EQ(id.k, 1);
  EXPECT_TRUE(id.bunched);
  auto m1 = bunching_margin(m0_cocycle(), 0.5, 1.0, 6);
  for (int k = 1; k <= 6; ++k) EXPECT_NEAR(m1.per_k[k - 1], std::pow(2.0, k), 1e-9 * std::pow(2.0, k));
  EXPECT_FALSE(m1.bunched);
  EXPECT_GE(m1.margin, 2.0);
  auto m3 = bunching_margin(m0_cocycle(), 0.5, 3.0, 6);
  EXPECT_NEAR(m3.margin, 0.5, 1e-12);
  EXPECT_EQ(m3.k, 1);
  EXPECT_TRUE(m3.bunched);
}

TEST(Holonomy, BunchingSubmultiplicative) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto c = random_cocycle(kFull2, 2, 0, 1, 60 + seed);
    auto b = bunching_margin(c, 0.7, 0.5, 6);
    for (int k1 = 1; k1 <= 3; ++k1)
      for (int k2 = 1; k1 + k2 <= 6; ++k2)
        EXPECT_LE(b.per_k[k1 + k2 - 1], b.per_k[k1 - 1] * b.per_k[k2 - 1] * (1 + 1e-12));
  }
}

TEST(Holonomy, LocallyConstantFutureIsIdentity) {
  Stream rng = derive_stream(1, 0);
  auto c = random_cocycle(kFull2, 3, 0, 2, 5);
  for (int t = 0; t < 10; ++t) {
    auto x = random_window(rng, -10, 40);
    auto y = partner(rng, x, true, 0);
    auto r = stable_holonomy(c, x, y, 20, 1e-12);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.truncation_n, 1);
    EXPECT_TRUE(r.matrix == Mat::Identity(3, 3));
    auto same = stable_holonomy(c, x, x, 20, 1e-12);
    EXPECT_EQ(same.residual, 0.0);
    EXPECT_TRUE(same.matrix == Mat::Identity(3, 3));
  }
}

TEST(Holonomy, PastDependenceOracleAndComposition) {
  Stream rng = derive_stream(2, 0);
  auto c = random_cocycle(kFull2, 2, 2, 0, 8);
  for (int t = 0; t < 10; ++t) {
    auto x = random_window(rng, -10, 30);
    auto y = partner(rng, x, true, 0);
    auto z = partner(rng, x, true, 0);
    auto hxy = stable_holonomy(c, x, y, 20, 1e-12);
    ASSERT_TRUE(hxy.converged);
    // generators agree from position 2 on, so H = M^2(y)^{-1} M^2(x)
    Mat oracle = product(c, y, 2).dense().inverse() * product(c, x, 2).dense();
    EXPECT_LT(op_norm(hxy.matrix - oracle), 1e-12);
    Mat hyz = stable_holonomy(c, y, z, 20, 1e-12).matrix, hxz = stable_holonomy(c, x, z, 20, 1e-12).matrix;
    EXPECT_LT(op_norm(hyz * hxy.matrix - hxz), 1e-11);
    // unstable side with pairs agreeing in the past
    auto u = partner(rng, x, false, -1);
    auto hu = unstable_holonomy(c, x, u, 5, 1e-12);
    EXPECT_TRUE(hu.converged);
    EXPECT_TRUE(hu.matrix == Mat::Identity(2, 2));
  }
}

TEST(Holonomy, DisagreeingPairRejected) {
  Stream rng = derive_stream(3, 0);
  auto x = random_window(rng, -5, 20);
  auto y = x;
  y.symbols[10] ^= 1;
  EXPECT_THROW(stable_holonomy(m0_cocycle(), x, y, 5, 1e-12), ConfigError);
}

TEST(Holonomy, Remark39TruncatedMatchesClosedForm) {
  Stream rng = derive_stream(4, 0);
  for (int t = 0; t < 20; ++t) {
    auto x = random_window(rng, -120, 120);
    auto ys = partner(rng, x, true, 0);
    EXPECT_LT(op_norm(remark39_stable(x, ys, 40) - remark39_stable(x, ys)), 1e-8);
    auto yu = partner(rng, x, false, 0);
    EXPECT_LT(op_norm(remark39_unstable(x, yu, 40) - remark39_unstable(x, yu)), 1e-8);
  }
  // a hand-evaluated instance: differences only at 0 and -1 / 0 and 1
  PointWindow x{-3, parse_word("0000000")}, y{-3, parse_word("0011000")};
  Mat hs = remark39_stable(x, y);
  EXPECT_DOUBLE_EQ(hs(2, 0), 1.0 / 3 + 1);
  EXPECT_DOUBLE_EQ(hs(2, 1), 0.5 + 1);
  Mat hu = remark39_unstable(x, PointWindow{-3, parse_word("0001100")});
  EXPECT_DOUBLE_EQ(hu(0, 2), 1 + 1.0 / 3);
  EXPECT_DOUBLE_EQ(hu(1, 2), 1 + 0.5);
}

TEST(Holonomy, Remark39Equivariance) {
  auto c = remark39_cocycle();
  Stream rng = derive_stream(5, 0);
  std::vector<std::pair<PointWindow, PointWindow>> st, un;
  for (int t = 0; t < 20; ++t) {
    auto x = random_window(rng, -80, 80);
    st.push_back({x, partner(rng, x, true, 0)});
    un.push_back({x, partner(rng, x, false, 0)});
  }
  EXPECT_LE(equivariance_residual(c, remark39_provider(true), st), 1e-9);
  EXPECT_LE(equivariance_residual(c, remark39_provider(false), un), 1e-9);
  Mat E = Mat::Zero(3, 3);
  E(0, 1) = 1;
  HolonomyProvider bad = [E](const PointWindow& x, const PointWindow& y) {
    return Mat(remark39_stable(x, y) + 0.01 * E);
  };
  EXPECT_GE(equivariance_residual(c, bad, st), 0.001);
  auto rc = random_cocycle(kFull2, 2, 0, 1, 9);
  EXPECT_EQ(equivariance_residual(rc, limit_provider(rc, 10, 1e-12, true), st), 0.0);
}

TEST(Holonomy, Remark39UnstableFixesLines) {
  Stream rng = derive_stream(6, 0);
  for (int t = 0; t < 20; ++t) {
    auto x = random_window(rng, -60, 60);
    Mat H = remark39_unstable(x, partner(rng, x, false, 0));
    for (int j = 0; j < 2; ++j) {
      Subspace line = axis_span(3, {j});
      EXPECT_LE(grassmann_distance(span_of(H * line.basis), line), 1e-10);
    }
  }
}

TEST(Holonomy, PinchingFailures) {
  auto id = pinching_twisting_check(identity_cocycle(kFull2, 2), identity_provider(2), identity_provider(2),
                                    parse_word("0"), parse_word("1"), 1e-9);
  EXPECT_FALSE(id.pinching);
  EXPECT_FALSE(id.verdict);
  Mat R(2, 2);
  R << std::cos(0.7), -std::sin(0.7), std::sin(0.7), std::cos(0.7);
  auto rot = pinching_twisting_check(constant_cocycle(kFull2, R), identity_provider(2), identity_provider(2),
                                     parse_word("0"), parse_word("1"), 1e-9);
  EXPECT_FALSE(rot.pinching);
  EXPECT_TRUE(rot.twisting_checks.empty());
}

TEST(Holonomy, Remark39PinchingAndTwisting) {
  auto c = remark39_cocycle();
  auto r = pinching_twisting_check(c, remark39_provider(true), remark39_provider(false), parse_word("0"),
                                   parse_word("1"), 1e-9);
  EXPECT_TRUE(r.pinching);
  ASSERT_EQ(r.eigenvalues.size(), 3u);
  EXPECT_NEAR(r.eigenvalues[0].real(), 3.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[1].real(), 2.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[2].real(), 1.0, 1e-12);
  EXPECT_EQ(r.homoclinic_length, 1);
  EXPECT_EQ(r.twisting_checks.size(), 18u);
  // identity holonomies: psi is diagonal, so e_1 lies in span(e_1, e_2)
  auto triv = pinching_twisting_check(c, identity_provider(3), identity_provider(3), parse_word("0"), parse_word("1"),
                                      1e-9);
  EXPECT_TRUE(triv.pinching);
  EXPECT_FALSE(triv.verdict);
}

TEST(Holonomy, InadmissibleRouteRejected) {
  auto gm = SubshiftSpec::golden_mean();
  auto c = identity_cocycle(gm, 2);
  EXPECT_THROW(pinching_twisting_check(c, identity_provider(2), identity_provider(2), parse_word("0"),
                                       parse_word("11"), 1e-9),
               ConfigError);
}
