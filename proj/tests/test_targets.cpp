#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "dbridge/harness/gradcheck.hpp"

using namespace dbridge;

namespace {

Array points(std::size_t n, std::size_t d, std::uint64_t seed, double scale) {
  Array x(Shape{n, d});
  rng::Stream s(seed, 0, rng::Purpose::data);
  for (auto& v : x.values()) v = scale * s.normal();
  return x;
}

double score_fd_error(const TargetDensity& t, const Array& x) {
  std::vector<double> a = t.score(x).values(), b;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    Array xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const std::size_t row = k / t.dim();
    b.push_back(-(t.energy(xp)[row] - t.energy(xm)[row]) / (2 * h));
  }
  return check::relative_error(a, b);
}

}  // namespace

TEST(Targets, ScoresMatchFiniteDifferencesAt100Points) {
  for (const char* spec : {"gmm:d=3,m=5,halfwidth=4", "mos:d=3,m=4,halfwidth=4", "funnel:d=4", "manywell:d=4,m=3",
                           "brownian", "gaussian:d=3,mean=1,std=2"}) {
    const TargetPtr t = make_target(spec);
    const Array x = points(100, t->dim(), 11, spec[0] == 'f' ? 1.0 : 2.0);
    EXPECT_LT(score_fd_error(*t, x), 1e-5) << spec;
  }
}

TEST(Targets, PresetDimensions) {
  EXPECT_EQ(make_target("gmm40")->dim(), 50u);
  EXPECT_EQ(make_target("gmm40")->mode_count(), 40u);
  EXPECT_EQ(make_target("mos10")->mode_count(), 10u);
  EXPECT_EQ(make_target("funnel")->dim(), 10u);
  EXPECT_EQ(make_target("manywell")->dim(), 5u);
  EXPECT_EQ(make_target("manywell")->mode_count(), 32u);
  EXPECT_EQ(make_target("brownian")->dim(), 32u);
}

TEST(Targets, SpecParsingRejectsUnknownInput) {
  EXPECT_THROW(make_target("nope"), ConfigError);
  EXPECT_THROW(make_target("gmm:d=2,bogus=1"), ConfigError);
  EXPECT_THROW(make_target("gmm:d"), ConfigError);
  EXPECT_THROW(make_target("manywell:d=2,m=3"), ConfigError);
}

TEST(Gmm, SingleCenteredComponentIsStandardNormal) {
  const MixtureTarget t(ComponentFamily::gaussian, 3, {0.0, 0.0, 0.0});
  EXPECT_NEAR(t.log_density(Array(Shape{1, 3}))[0], -1.5 * std::log(2 * M_PI), 1e-14);
}

TEST(Gmm, OneDimensionalPairMatchesQuadratureNormalization) {
  const MixtureTarget t(ComponentFamily::gaussian, 1, {-3.0, 3.0});
  auto unnorm = [&](double v) { return std::exp(t.log_density(Array::matrix({{v}}))[0]); };
  const double z = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(unnorm, -40.0, 40.0, 15, 1e-14);
  const double at0 = t.log_density(Array::matrix({{0.0}}))[0];
  EXPECT_NEAR(at0, -5.4189385332046727418, 1e-12);  // log N(0; 3, 1)
  EXPECT_NEAR(std::exp(at0) / z, std::exp(at0), 1e-10);
}

TEST(Mos, SingleComponentIsStudentT2WithHeavyTails) {
  const MixtureTarget t(ComponentFamily::student_t2, 1, {0.0});
  const double at10 = t.log_density(Array::matrix({{10.0}}))[0];
  EXPECT_NEAR(at10, -6.9374592199264066621, 1e-12);
  EXPECT_GT(at10, -50.918938533204672742);  // standard normal at 10
}

TEST(Funnel, DensityAtOriginAndFirstCoordinateVariance) {
  const TargetPtr t = make_target("funnel:d=10");
  // x1 ~ N(0, 9); the other nine are N(0, e^0 = 1) at x1 = 0.
  const double ref = -0.5 * std::log(2 * M_PI * 9.0) - 9 * 0.5 * std::log(2 * M_PI);
  EXPECT_NEAR(t->log_density(Array(Shape{1, 10}))[0], ref, 1e-12);
  const Array s = t->sample(1000000, 5);
  double m = 0, q = 0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    m += s(i, 0);
    q += s(i, 0) * s(i, 0);
  }
  m /= 1e6;
  EXPECT_NEAR(q / 1e6 - m * m, 9.0, 0.1);
}

TEST(ManyWell, LogNormalizerMatchesHighPrecisionQuadrature) {
  // log of integral exp(-(x^2 - 4)^2) dx, computed at 30 digits.
  const auto t = std::dynamic_pointer_cast<const ManyWellTarget>(make_target("manywell"));
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->well_log_z(), -0.10821110257589078638, 1e-12);
  EXPECT_NEAR(*t->log_z(), -0.54105551287945393192, 1e-11);
  EXPECT_NEAR(*make_target("manywell:delta=1")->log_z(), 3.3996312144689326674, 1e-11);
}

TEST(ManyWell, SymmetricWellsHaveZeroMeanSamples) {
  const TargetPtr t = make_target("manywell:d=2,m=2,delta=0");
  const Array s = t->sample(200000, 3);
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < s.rows(); ++i) m += s(i, j);
    EXPECT_NEAR(m / 2e5, 0.0, 0.01);
  }
}

TEST(ManyWell, SamplerMatchesWellMoments) {
  const TargetPtr t = make_target("manywell:d=1,m=1");
  auto w = [](double v) { return std::exp(-(v * v - 4) * (v * v - 4)); };
  using boost::math::quadrature::gauss_kronrod;
  const double z = gauss_kronrod<double, 61>::integrate(w, -9.0, 9.0, 15, 1e-14);
  const double m2 = gauss_kronrod<double, 61>::integrate([&](double v) { return v * v * w(v); }, -9.0, 9.0, 15, 1e-14) / z;
  const double m4 =
      gauss_kronrod<double, 61>::integrate([&](double v) { return std::pow(v, 4) * w(v); }, -9.0, 9.0, 15, 1e-14) / z;
  const std::size_t n = 200000;
  const Array s = t->sample(n, 9);
  double a = 0, pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a += s[i] * s[i];
    pos += s[i] > 0 ? 1 : 0;
  }
  a /= static_cast<double>(n);
  EXPECT_NEAR(a, m2, 4 * std::sqrt((m4 - m2 * m2) / static_cast<double>(n)));
  EXPECT_NEAR(pos / static_cast<double>(n), 0.5, 4 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST(Mixture, SamplerReproducesComponentWeights) {
  const TargetPtr t = make_target("gmm:d=2,m=5,halfwidth=30,seed=4");
  const std::size_t n = 100000;
  const auto a = t->assign_modes(t->sample(n, 6));
  std::vector<double> c(5, 0.0);
  for (auto k : a) c[k] += 1;
  const double sd = std::sqrt(n * 0.2 * 0.8);
  for (double v : c) EXPECT_NEAR(v, n * 0.2, 3 * sd);
}

TEST(Brownian, ScoreVanishesAtRidgeSolutionWhenScalesFixed) {
  // With both log-scales at 0, the state posterior is Gaussian with precision L + M (L the random-walk
  // precision, M the observation mask), so its mode solves (L + M) x = M y.
  const std::size_t n = 8;
  std::vector<double> y = {0.3, -1.0, 2.0, 0.5, 0.0, 1.2, -0.4, 0.9};
  std::vector<char> obs = {1, 1, 0, 0, 1, 1, 1, 0};
  const BrownianTarget t(y, obs);
  std::vector<double> lo(n), di(n), up(n), rhs(n);
  for (std::size_t k = 0; k < n; ++k) {
    di[k] = (k + 1 < n ? 2.0 : 1.0) + (obs[k] ? 1.0 : 0.0);
    lo[k] = k ? -1.0 : 0.0;
    up[k] = k + 1 < n ? -1.0 : 0.0;
    rhs[k] = obs[k] ? y[k] : 0.0;
  }
  for (std::size_t k = 1; k < n; ++k) {  // tridiagonal elimination
    const double f = lo[k] / di[k - 1];
    di[k] -= f * up[k - 1];
    rhs[k] -= f * rhs[k - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = rhs[n - 1] / di[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) x[k] = (rhs[k] - up[k] * x[k + 1]) / di[k];
  Array z(Shape{1, n + 2});
  for (std::size_t k = 0; k < n; ++k) z(0, 2 + k) = x[k];
  const Array g = t.score(z);
  for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(g(0, 2 + k), 0.0, 1e-12);
}

TEST(Brownian, LogDensityFiniteForExtremeInputs) {
  const TargetPtr t = make_target("brownian");
  Array x = points(20, t->dim(), 4, 30.0);
  for (double v : t->log_density(x)) EXPECT_TRUE(std::isfinite(v));
}

TEST(Targets, EnergyShiftMovesLogDensityAndKeepsScore) {
  const TargetPtr base = make_target("gmm:d=2,m=3,halfwidth=5");
  const TargetPtr shifted = make_target("gmm:d=2,m=3,halfwidth=5,shift=2.5");
  const Array x = points(50, 2, 8, 3.0);
  const auto a = base->log_density(x), b = shifted->log_density(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i] - 2.5, 1e-12);
  EXPECT_EQ(base->score(x).values(), shifted->score(x).values());
  EXPECT_EQ(*shifted->log_z(), *base->log_z() - 2.5);
}
