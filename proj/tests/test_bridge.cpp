#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "dbridge/harness/gradcheck.hpp"

using namespace dbridge;

namespace {

BridgeModel zero_drift(std::size_t dim, std::size_t steps, double dt, double sigma, double prior_std) {
  BridgeConfig c;
  c.kind = Parameterization::dbs;
  c.dim = dim;
  c.steps = steps;
  c.dt = dt;
  c.sigma_init = sigma;
  c.prior_std_init = prior_std;
  c.hidden = 8;
  c.embed = 8;
  return BridgeModel(c);
}

bool same_batch(const TrajectoryBatch& a, const TrajectoryBatch& b) {
  if (a.batch != b.batch || a.valid != b.valid || a.log_prior != b.log_prior || a.log_target != b.log_target)
    return false;
  for (std::size_t t = 0; t <= a.steps; ++t) {
    if (a.states[t].values() != b.states[t].values() || a.noises[t].values() != b.noises[t].values()) return false;
    if (a.log_q[t] != b.log_q[t] || a.log_p[t] != b.log_p[t]) return false;
  }
  return true;
}

double log_normal(double x, double mean, double var) {
  return -0.5 * (x - mean) * (x - mean) / var - 0.5 * std::log(2 * M_PI * var);
}

}  // namespace

TEST(Simulate, ZeroDriftOneStepAddsUnitVariance) {
  const BridgeModel m = zero_drift(2, 1, 1.0, 1.0, 1.0);
  const TargetPtr t = make_target("gaussian:d=2");
  const TrajectoryBatch b = simulate_reverse(m, *t, 100000, 3);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0, q = 0;
    for (std::size_t i = 0; i < b.batch; ++i) {
      s += b.samples()(i, j);
      q += b.samples()(i, j) * b.samples()(i, j);
    }
    s /= 1e5;
    EXPECT_NEAR(q / 1e5 - s * s, 2.0, 0.02);
  }
}

TEST(Simulate, SameSeedGivesBitIdenticalBatches) {
  BridgeModel m = check::small_model(Parameterization::dbs, 3, 6, 1);
  const TargetPtr t = make_target("gmm:d=3,m=4,halfwidth=3");
  EXPECT_TRUE(same_batch(simulate_reverse(m, *t, 150, 9), simulate_reverse(m, *t, 150, 9)));
  EXPECT_FALSE(same_batch(simulate_reverse(m, *t, 150, 9), simulate_reverse(m, *t, 150, 10)));
}

TEST(Simulate, ThreadCountDoesNotChangeResults) {
  BridgeModel m = check::small_model(Parameterization::cmcd, 2, 5, 2);
  const TargetPtr t = make_target("gmm:d=2,m=4,halfwidth=3");
  setenv("DBRIDGE_THREADS", "1", 1);
  const TrajectoryBatch one = simulate_reverse(m, *t, 300, 4);
  const GradReport g1 = grad_rkl_ld(m, *t, one);
  setenv("DBRIDGE_THREADS", "4", 1);
  const TrajectoryBatch four = simulate_reverse(m, *t, 300, 4);
  const GradReport g4 = grad_rkl_ld(m, *t, four);
  unsetenv("DBRIDGE_THREADS");
  EXPECT_TRUE(same_batch(one, four));
  EXPECT_TRUE(g1 == g4);
}

TEST(Simulate, PathNoiseIsIndependentOfBatching) {
  BridgeModel m = check::small_model(Parameterization::dbs, 2, 4, 3);
  const TargetPtr t = make_target("gaussian:d=2");
  const TrajectoryBatch whole = simulate_reverse(m, *t, 200, 5);
  const TrajectoryBatch tail = simulate_reverse(m, *t, 100, 5, 100);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(whole.samples()(100 + i, j), tail.samples()(i, j));
}

TEST(Cmcd, InitialReverseStepIsUnadjustedLangevin) {
  BridgeConfig c;
  c.kind = Parameterization::cmcd;
  c.dim = 2;
  c.steps = 4;
  c.sigma_init = 0.8;
  c.prior_std_init = 1.5;
  c.hidden = 8;
  c.embed = 8;
  const BridgeModel m(c);
  const TargetPtr t = make_target("gaussian:d=2,mean=1");
  const TrajectoryBatch b = simulate_reverse(m, *t, 20, 7);
  const double sigma = 0.8, dt = 0.25;
  const Array mean(Shape{2}), log_std(Shape{2}, std::log(1.5));
  const auto eta = schedule_etas(Array(Shape{4}));
  for (std::size_t step = 4; step >= 1; --step) {
    const Array g = anneal_logdensity(*t, mean, log_std, eta[step], b.states[step]).score;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double drift = g[k] * (sigma * sigma * 0.5);
      const double expect = b.states[step][k] + drift * dt + b.noises[step - 1][k] * (sigma * std::sqrt(dt));
      EXPECT_NEAR(b.states[step - 1][k], expect, 1e-14 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST(Cmcd, DriftsSumToSigmaSquaredLangevin) {
  BridgeModel m = check::small_model(Parameterization::cmcd, 3, 6, 4);
  const TargetPtr t = make_target("gmm:d=3,m=3,halfwidth=3");
  ad::Tape tape;
  BoundModel bm(tape, m, false);
  const Array x = check::random_array({7, 3}, 3, -3, 3);
  const auto sigma = m.sigma();
  for (std::size_t step = 0; step <= 6; ++step) {
    Drifts d = compute_drifts(bm, *t, tape.constant(x), step, true, true);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const double lhs = d.reverse.value()(i, j) + d.forward.value()(i, j);
        const double rhs = sigma[j] * sigma[j] * d.langevin.value()(i, j);
        EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
      }
  }
}

TEST(Transition, ZeroDriftStayingPutWithUnitVariance) {
  const BridgeModel m = zero_drift(3, 1, 1.0, 1.0, 1.0);
  const TargetPtr t = make_target("gaussian:d=3");
  const Array x = check::random_array({4, 3}, 1, -2, 2);
  for (double v : log_transition_reverse(m, *t, x, x, 1)) EXPECT_NEAR(v, -1.5 * std::log(2 * M_PI), 1e-14);
  for (double v : log_transition_forward(m, *t, x, x, 1)) EXPECT_NEAR(v, -1.5 * std::log(2 * M_PI), 1e-14);
}

TEST(Transition, WeightGradientsMatchFiniteDifferences) {
  for (const auto& r : check::model_checks(1e-5))
    if (r.name.rfind("transition/", 0) == 0 || r.name.find("drifts") != std::string::npos) {
      EXPECT_TRUE(r.passed()) << r.name << " " << r.error;
    }
}

TEST(LogRatio, StoredDensitiesMatchRecomputation) {
  BridgeModel m = check::small_model(Parameterization::dbs, 2, 5, 6);
  const TargetPtr t = make_target("gmm:d=2,m=4,halfwidth=3");
  const TrajectoryBatch b = simulate_reverse(m, *t, 100, 2);
  EXPECT_TRUE(same_batch(b, recompute_log_densities(m, *t, b)));
  const TrajectoryBatch f = simulate_forward(m, *t, 100, 2);
  EXPECT_TRUE(same_batch(f, recompute_log_densities(m, *t, f)));
}

TEST(LogRatio, EnergyShiftAddsConstant) {
  BridgeModel m = check::small_model(Parameterization::cmcd, 2, 4, 7);
  const TargetPtr t = make_target("gaussian:d=2,mean=0.5");
  const TargetPtr ts = make_target("gaussian:d=2,mean=0.5,shift=3.25");
  const auto a = simulate_reverse(m, *t, 64, 1).log_ratio();
  const auto b = simulate_reverse(m, *ts, 64, 1).log_ratio();
  // CMCD drifts use the score only, so the paths coincide and only log rho moves.
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i] + 3.25, 1e-12);
}

TEST(LogRatio, StationaryChainHasZeroRatio) {
  for (std::size_t steps : {1u, 6u}) {
    const BridgeModel m = stationary_gaussian_chain(Parameterization::fixed_forward, 3, steps, 0.6, 0, 8);
    const TargetPtr t = make_target("gaussian:d=3");
    for (double l : simulate_reverse(m, *t, 500, 2).log_ratio()) EXPECT_NEAR(l, 0.0, 1e-12);
  }
}

TEST(LogRatio, TwoStepOneDimensionalMatchesDirectFormula) {
  // Drifts sigma * k * g(x, t) with g the annealed Langevin score between a N(0, 1.5^2) prior and
  // a N(0.3, 1) target; eta(t) = (T - t) / T for a flat schedule.
  const double rho = 0.4;
  BridgeModel m = stationary_gaussian_chain(Parameterization::dbs, 1, 2, rho, 0, 8);
  m.params().at("prior.log_std").value[0] = std::log(1.5);
  const TargetPtr t = make_target("gaussian:d=1,mean=0.3");
  const double dt = 0.5, sigma = std::sqrt((1 - rho * rho) / dt), k = (1 - rho) / (sigma * dt);
  auto g = [](double x, int step) {
    const double eta = (2.0 - step) / 2.0;
    return eta * -(x - 0.3) + (1 - eta) * -(x / 2.25);
  };
  auto drift = [&](double x, int step) { return sigma * k * g(x, step); };
  const TrajectoryBatch b = simulate_reverse(m, *t, 50, 8);
  const auto l = b.log_ratio();
  for (std::size_t i = 0; i < b.batch; ++i) {
    const double x0 = b.states[0][i], x1 = b.states[1][i], x2 = b.states[2][i];
    const double v = sigma * sigma * dt;
    const double log_q = log_normal(x2, 0.0, 2.25) + log_normal(x1, x2 + drift(x2, 2) * dt, v) +
                         log_normal(x0, x1 + drift(x1, 1) * dt, v);
    const double log_p = log_normal(x0, 0.3, 1.0) + log_normal(x1, x0 + drift(x0, 0) * dt, v) +
                         log_normal(x2, x1 + drift(x1, 1) * dt, v);
    EXPECT_NEAR(l[i], log_q - log_p, 1e-12);
  }
}

TEST(Entropy, PluggedConstantsGiveOneHalf) {
  const BridgeModel m = zero_drift(1, 1, 1.0, std::sqrt(1 / (2 * M_PI)), std::sqrt(1 / (2 * M_PI * M_E)));
  EXPECT_NEAR(joint_entropy_closed_form(m), 0.5, 1e-14);
}

TEST(Entropy, DoublingSigmaAddsNTLog2) {
  BridgeModel m = check::small_model(Parameterization::cmcd, 3, 7, 1);
  const double h = joint_entropy_closed_form(m);
  for (auto& g : m.params().at("sigma.log").value.values()) g += std::log(2.0);
  EXPECT_NEAR(joint_entropy_closed_form(m) - h, 3 * 7 * std::log(2.0), 1e-12);
}

TEST(Entropy, MatchesMonteCarloJointLogDensity) {
  BridgeModel m = check::small_model(Parameterization::dbs, 2, 4, 5);
  const TargetPtr t = make_target("gmm:d=2,m=3,halfwidth=3");
  const TrajectoryBatch b = simulate_reverse(m, *t, 100000, 12);
  double s = 0, q = 0;
  for (std::size_t i = 0; i < b.batch; ++i) {
    const double v = -b.log_q_joint(i);
    s += v;
    q += v * v;
  }
  const double n = static_cast<double>(b.batch), mean = s / n, se = std::sqrt((q / n - mean * mean) / n);
  EXPECT_NEAR(mean, joint_entropy_closed_form(m), 3 * se);
}

TEST(Entropy, ZeroDriftChainIsPriorPlusIncrementEntropies) {
  // Zero drifts make the path a Gaussian random walk: prior entropy plus T independent increments of
  // variance sigma^2 dt. The endpoint X_0 ~ N(0, s^2 + T sigma^2 dt) is the prior plus independent
  // noise, so its entropy can only exceed the prior's.
  auto h = [](double var) { return 0.5 * std::log(2 * M_PI * M_E * var); };
  for (double sigma : {0.3, 1.0, 2.5}) {
    const BridgeModel m = zero_drift(2, 5, 0.0, sigma, 0.7);
    const double inc = sigma * sigma * 0.2;
    EXPECT_NEAR(joint_entropy_closed_form(m), 2 * (h(0.49) + 5 * h(inc)), 1e-12);
    EXPECT_GE(2 * h(0.49 + 5 * inc), 2 * h(0.49));
  }
}

TEST(Batch, SelectionAndValidity) {
  BridgeModel m = check::small_model(Parameterization::dbs, 2, 3, 1);
  const TargetPtr t = make_target("gaussian:d=2");
  TrajectoryBatch b = simulate_reverse(m, *t, 10, 1);
  EXPECT_EQ(b.invalid_count(), 0u);
  b.valid[3] = 0;
  b.valid[7] = 0;
  const TrajectoryBatch v = b.valid_only();
  EXPECT_EQ(v.batch, 8u);
  EXPECT_EQ(v.path_ids[3], 4u);
  EXPECT_EQ(v.samples()(3, 1), b.samples()(4, 1));
  EXPECT_EQ(v.log_ratio()[6], b.log_ratio()[8]);
}

TEST(Bridge, ConfigurationErrors) {
  BridgeConfig c;
  c.steps = 0;
  EXPECT_THROW(BridgeModel{c}, ConfigError);
  c.steps = 4;
  c.kind = Parameterization::fixed_forward;
  c.learn_sigma = true;
  EXPECT_THROW(BridgeModel{c}, ConfigError);
  const BridgeModel m = zero_drift(2, 2, 0, 1, 1);
  EXPECT_THROW(simulate_reverse(m, *make_target("gaussian:d=3"), 4, 0), ConfigError);
}
