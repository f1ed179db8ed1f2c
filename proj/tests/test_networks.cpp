#include <gtest/gtest.h>

#include <cmath>

#include "dbridge/harness/gradcheck.hpp"

using namespace dbridge;

namespace {

ScoreNetIndex net_in(ParamStore& store, std::size_t dim) {
  return add_score_net(store, "net", dim, 8, 8, Block::alpha, true, 3);
}

}  // namespace

TEST(ScoreNet, ZeroInitializedOutputIsZero) {
  ParamStore store;
  const ScoreNetIndex idx = net_in(store, 3);
  const Array x = check::random_array({4, 3}, 1, -5, 5);
  const Array g = check::random_array({4, 3}, 2, -500, 500);
  const Array out = score_forward(store, idx, x, 0.25, g);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(ScoreNet, LangevinInputIsClippedTo100) {
  ParamStore store;
  const ScoreNetIndex idx = net_in(store, 2);
  for (auto& v : store.at("net.head.2.bias").value.values()) v = 1.0;
  const Array x = Array::matrix({{0.1, -0.2}});
  const Array g = Array::matrix({{1e6, -1e6}});
  const Array out = score_forward(store, idx, x, 0.5, g);
  EXPECT_EQ(out(0, 0), 100.0);
  EXPECT_EQ(out(0, 1), -100.0);
}

TEST(ScoreNet, OutputIsClippedTo1e4) {
  ParamStore store;
  const ScoreNetIndex idx = net_in(store, 1);
  for (auto& v : store.at("net.trunk.2.bias").value.values()) v = 5e4;
  const Array out = score_forward(store, idx, Array::matrix({{0.0}}), 0.0, Array::matrix({{0.0}}));
  EXPECT_EQ(out(0, 0), 1e4);
}

TEST(ScoreNet, TimeEmbeddingShapeAndRange) {
  const Array e = time_embedding(0.3, 64);
  ASSERT_EQ(e.size(), 64u);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_NEAR(e[k] * e[k] + e[32 + k] * e[32 + k], 1.0, 1e-15);
  EXPECT_THROW(time_embedding(0.3, 7), ConfigError);
}

TEST(Schedule, BetasSumToOneAndEtaIsMonotone) {
  Array raw = check::random_array({12}, 4, -3, 3);
  for (int trial = 0; trial < 2; ++trial) {
    const auto beta = schedule_betas(raw);
    double s = 0.0;
    for (double b : beta) {
      EXPECT_GT(b, 0.0);
      s += b;
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
    const auto eta = schedule_etas(raw);
    EXPECT_EQ(eta.front(), 1.0);
    EXPECT_EQ(eta.back(), 0.0);
    for (std::size_t t = 1; t < eta.size(); ++t) EXPECT_LE(eta[t], eta[t - 1]);
    raw[5] += 2.5;
  }
}

TEST(Annealing, EndpointsAreExactlyPriorAndTarget) {
  const auto target = make_target("gmm:d=2,m=3,halfwidth=4,seed=1");
  const Array mean = Array::vector({0.5, -1.0}), log_std = Array::vector({0.2, -0.3});
  const Array x = check::random_array({6, 2}, 5, -3, 3);

  const AnnealedEval at_target = anneal_logdensity(*target, mean, log_std, 1.0, x);
  EXPECT_EQ(at_target.log_density, target->log_density(x));
  EXPECT_EQ(at_target.score.values(), target->score(x).values());

  const AnnealedEval at_prior = anneal_logdensity(*target, mean, log_std, 0.0, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double lp = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      const double s = std::exp(log_std[j]);
      const double z = (x(i, j) - mean[j]) / s;
      lp += -0.5 * z * z - 0.5 * std::log(2 * M_PI) - std::log(s);
      EXPECT_NEAR(at_prior.score(i, j), -(x(i, j) - mean[j]) / (s * s), 1e-14);
    }
    EXPECT_NEAR(at_prior.log_density[i], lp, 1e-12);
  }
}

TEST(Annealing, HalfwayBetweenUnitGaussiansHasMidpointScore) {
  const double m1 = 1.5, m2 = -0.5;
  const auto target = make_target("gaussian:d=1,mean=1.5");
  const Array x = Array::matrix({{-2.0}, {0.0}, {0.7}, {3.0}});
  const AnnealedEval a = anneal_logdensity(*target, Array::vector({m2}), Array::vector({0.0}), 0.5, x);
  for (std::size_t i = 0; i < x.rows(); ++i) EXPECT_NEAR(a.score(i, 0), -(x(i, 0) - 0.5 * (m1 + m2)), 1e-14);
}

TEST(Prior, LogDensityMatchesDiagonalGaussianFormula) {
  const Array mean = check::random_array({3}, 6, -1, 1), log_std = check::random_array({3}, 7, -1, 1);
  const Array x = check::random_array({10, 3}, 8, -4, 4);
  ad::Tape t;
  const auto lp = prior_log_density(t.constant(x), t.constant(mean), t.constant(log_std)).value();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ref = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double s = std::exp(log_std[j]);
      ref += -0.5 * std::pow((x(i, j) - mean[j]) / s, 2) - 0.5 * std::log(2 * M_PI * s * s);
    }
    EXPECT_NEAR(lp[i], ref, 1e-12);
  }
}

TEST(ScoreNet, WeightGradientsMatchFiniteDifferences) {
  for (const auto& r : check::model_checks(1e-5))
    if (r.name.find("score_network") != std::string::npos) {
      EXPECT_TRUE(r.passed()) << r.name << " " << r.error;
    }
}

TEST(Cmcd, DriftsAtInitializationAreUnadjustedLangevin) {
  BridgeConfig c;
  c.kind = Parameterization::cmcd;
  c.dim = 2;
  c.steps = 8;
  c.sigma_init = 0.7;
  BridgeModel m(c);
  const auto target = make_target("gmm:d=2,m=4,halfwidth=3,seed=2");
  const Array x = check::random_array({5, 2}, 9, -3, 3);
  ad::Tape t;
  BoundModel bm(t, m, false);
  for (std::size_t step = 0; step <= 8; ++step) {
    Drifts d = compute_drifts(bm, *target, t.constant(x), step, true, true);
    const double half = 0.5 * 0.7 * 0.7;
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(d.reverse.value()[k], d.langevin.value()[k] * half);
      EXPECT_EQ(d.forward.value()[k], d.reverse.value()[k]);
    }
  }
}
