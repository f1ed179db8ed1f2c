#include <gtest/gtest.h>

#include <cmath>

#include "dbridge/dpi.hpp"

using namespace dbridge;
using namespace dbridge::dpi;

namespace {

// Variance under q of the joint and x-marginal log-ratios, straight from the tables.
std::pair<double, double> variances(const Table& q, const Table& p) {
  double mj = 0, sj = 0, mm = 0, sm = 0;
  for (int x = 0; x < 2; ++x) {
    const double qx = q[x][0] + q[x][1], px = p[x][0] + p[x][1];
    if (qx == 0) continue;
    const double lm = std::log(qx / px);
    mm += qx * lm;
    sm += qx * lm * lm;
    for (int y = 0; y < 2; ++y) {
      if (q[x][y] == 0) continue;
      const double lj = std::log(q[x][y] / p[x][y]);
      mj += q[x][y] * lj;
      sj += q[x][y] * lj * lj;
    }
  }
  return {sj - mj * mj, sm - mm * mm};
}

}  // namespace

TEST(Dpi, CounterexampleNumbers) {
  const FinitePair pr = counterexample();
  const Decomposition d = dpi_gap(pr);
  EXPECT_NEAR(d.var_conditional, 0.2331, 1e-3);
  EXPECT_NEAR(d.covariance, -0.6365, 1e-3);
  EXPECT_LT(d.gap, 0.0);

  const double l9 = std::log(9.0);
  EXPECT_NEAR(d.var_marginal, 0.36 * l9 * l9, 1e-12);
  EXPECT_NEAR(d.var_joint, 0.09 * std::pow(std::log(16.2), 2), 1e-12);
  const auto [vj, vm] = variances(pr.q(), pr.p());
  EXPECT_NEAR(d.var_joint, vj, 1e-12);
  EXPECT_NEAR(d.var_marginal, vm, 1e-12);
  EXPECT_NEAR(lv_functional(pr, Level::joint), vj, 1e-12);
  EXPECT_NEAR(lv_functional(pr, Level::marginal), vm, 1e-12);
  EXPECT_LE(std::abs(d.identity_residual), 1e-12);

  const KlPair kl = kl_levels(pr);
  EXPECT_NEAR(kl.joint, 0.9 * std::log(18.0) + 0.1 * std::log(10.0 / 9.0), 1e-12);
  EXPECT_NEAR(kl.marginal, 0.8 * l9, 1e-12);
  EXPECT_GE(kl.gap(), 0.0);
}

TEST(Dpi, EqualPairHasZeroGap) {
  const Table t = {{{0.1, 0.2}, {0.3, 0.4}}};
  const Decomposition d = dpi_gap(FinitePair(t, t));
  EXPECT_NEAR(d.var_joint, 0.0, 1e-15);
  EXPECT_NEAR(d.var_marginal, 0.0, 1e-15);
  EXPECT_NEAR(d.gap, 0.0, 1e-15);
}

TEST(Dpi, ProductPairsSatisfyTheInequality) {
  for (double a : {0.1, 0.4, 0.8})
    for (double b : {0.2, 0.6, 0.95}) {
      const FinitePair pr = FinitePair::from_conditionals({a, 1 - a}, {b, b}, {0.5, 0.5}, {0.3, 0.3});
      const Decomposition d = dpi_gap(pr);
      EXPECT_NEAR(d.covariance, 0.0, 1e-12);
      EXPECT_GE(d.gap, -1e-12);
    }
}

TEST(Dpi, SearchFindsViolationsAndKlNeverBreaks) {
  const SearchResult r = violation_search(7, 10000);
  EXPECT_EQ(r.trials, 10000u);
  ASSERT_FALSE(r.violations.empty());
  EXPECT_LE(r.max_identity_residual, 1e-12);
  EXPECT_GE(r.min_kl_gap, -1e-12);
  for (std::size_t i = 1; i < r.violations.size(); ++i)
    EXPECT_LE(r.violations[i - 1].decomposition.gap, r.violations[i].decomposition.gap);
  const Violation& v = r.violations.front();
  const auto [vj, vm] = variances(v.pair.q(), v.pair.p());
  EXPECT_NEAR(vj - vm, v.decomposition.gap, 1e-10);
}

TEST(Dpi, InvalidTablesAreRejected) {
  const Table ok = {{{0.25, 0.25}, {0.25, 0.25}}};
  EXPECT_THROW(FinitePair({{{0.5, 0.5}, {0.5, 0.5}}}, ok), DomainError);
  EXPECT_THROW(FinitePair(ok, {{{-0.1, 0.6}, {0.25, 0.25}}}), DomainError);
  EXPECT_THROW(FinitePair(ok, {{{NAN, 0.5}, {0.25, 0.25}}}), DomainError);
}
