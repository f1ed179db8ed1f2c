#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dbridge/core/error.hpp"
#include "dbridge/core/random.hpp"

namespace dbridge::dpi {

using Table = std::array<std::array<double, 2>, 2>;  // [x][y]

// Joint tables q(x, y) and p(x, y) over {0,1}^2.
class FinitePair {
 public:
  FinitePair(const Table& q, const Table& p) : q_(q), p_(p) {
    check(q_, "q");
    check(p_, "p");
  }

  // From marginals over x and conditionals P(Y = 0 | x).
  static FinitePair from_conditionals(std::array<double, 2> qx, std::array<double, 2> qy0, std::array<double, 2> px,
                                      std::array<double, 2> py0) {
    Table q, p;
    for (int x = 0; x < 2; ++x) {
      q[x] = {qx[x] * qy0[x], qx[x] * (1.0 - qy0[x])};
      p[x] = {px[x] * py0[x], px[x] * (1.0 - py0[x])};
    }
    return FinitePair(q, p);
  }

  const Table& q() const { return q_; }
  const Table& p() const { return p_; }
  double q_x(int x) const { return q_[x][0] + q_[x][1]; }
  double p_x(int x) const { return p_[x][0] + p_[x][1]; }

 private:
  static void check(const Table& t, const char* which) {
    double s = 0.0;
    for (auto& row : t)
      for (double v : row) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError(std::string(which) + " has a negative or undefined entry");
        s += v;
      }
    if (std::abs(s - 1.0) > 1e-12) throw DomainError(std::string(which) + " does not sum to 1");
  }

  Table q_, p_;
};

enum class Level { marginal, joint };

// Variance decomposition of the log-ratio under q:
// Var_joint = Var_marginal + Var_conditional + 2 Cov(conditional, marginal).
struct Decomposition {
  double var_marginal = 0.0;
  double var_conditional = 0.0;
  double covariance = 0.0;
  double var_joint = 0.0;  // computed directly from the joint log-ratio
  double gap = 0.0;        // var_joint - var_marginal; negative certifies a violation
  double identity_residual = 0.0;
};

namespace detail {

struct Cells {
  // log-ratios at each (x, y); cells with q(x, y) = 0 carry zero weight and are skipped (0 log 0 = 0).
  std::array<std::array<double, 2>, 2> marginal{}, conditional{}, joint{};
  std::array<std::array<double, 2>, 2> weight{};
};

inline Cells cells(const FinitePair& pr) {
  Cells c;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      const double qxy = pr.q()[x][y];
      c.weight[x][y] = qxy;
      if (qxy == 0.0) continue;
      const double pxy = pr.p()[x][y];
      if (pxy == 0.0) throw DomainError("p vanishes on the support of q");
      const double qx = pr.q_x(x), px = pr.p_x(x);
      c.marginal[x][y] = std::log(qx / px);
      c.conditional[x][y] = std::log((qxy / qx) / (pxy / px));
      c.joint[x][y] = std::log(qxy / pxy);
    }
  return c;
}

inline double mean(const Cells& c, const std::array<std::array<double, 2>, 2>& v) {
  double s = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      if (c.weight[x][y] > 0) s += c.weight[x][y] * v[x][y];
  return s;
}

inline double cov(const Cells& c, const std::array<std::array<double, 2>, 2>& a,
                  const std::array<std::array<double, 2>, 2>& b) {
  const double ma = mean(c, a), mb = mean(c, b);
  double s = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      if (c.weight[x][y] > 0) s += c.weight[x][y] * (a[x][y] - ma) * (b[x][y] - mb);
  return s;
}

}  // namespace detail

// Var_{(X,Y)~q}[log q(X)/p(X)] or Var_{(X,Y)~q}[log q(X,Y)/p(X,Y)].
inline double lv_functional(const FinitePair& pr, Level level) {
  const detail::Cells c = detail::cells(pr);
  return level == Level::marginal ? detail::cov(c, c.marginal, c.marginal) : detail::cov(c, c.joint, c.joint);
}

inline Decomposition dpi_gap(const FinitePair& pr) {
  const detail::Cells c = detail::cells(pr);
  Decomposition d;
  d.var_marginal = detail::cov(c, c.marginal, c.marginal);
  d.var_conditional = detail::cov(c, c.conditional, c.conditional);
  d.covariance = detail::cov(c, c.conditional, c.marginal);
  d.var_joint = detail::cov(c, c.joint, c.joint);
  d.gap = d.var_joint - d.var_marginal;
  d.identity_residual = d.var_joint - (d.var_marginal + d.var_conditional + 2.0 * d.covariance);
  return d;
}

// KL(q || p) at the joint and the x-marginal level.
struct KlPair {
  double joint = 0.0, marginal = 0.0;
  double gap() const { return joint - marginal; }
};

inline KlPair kl_levels(const FinitePair& pr) {
  const detail::Cells c = detail::cells(pr);
  return KlPair{detail::mean(c, c.joint), detail::mean(c, c.marginal)};
}

// The two-point counterexample: p(x) = (0.1, 0.9), p(y=0|x) = (0.5, 0.1); q(x) = (0.9, 0.1), q(y=0|x) = 1.
inline FinitePair counterexample() {
  return FinitePair::from_conditionals({0.9, 0.1}, {1.0, 1.0}, {0.1, 0.9}, {0.5, 0.1});
}

struct Violation {
  FinitePair pair;
  Decomposition decomposition;
};

struct SearchResult {
  std::size_t trials = 0;
  std::vector<Violation> violations;  // gap < -1e-6, most negative first
  double max_identity_residual = 0.0;
  double min_kl_gap = INFINITY;
};

// Random 2x2 pairs; about a third of the q tables get a zero cell or a zero y-column.
inline SearchResult violation_search(std::uint64_t seed, std::size_t trials) {
  SearchResult r;
  r.trials = trials;
  rng::Stream s(seed, 0, rng::Purpose::search);
  auto random_table = [&](bool allow_zero) {
    Table t;
    double total = 0.0;
    for (auto& row : t)
      for (auto& v : row) {
        v = -std::log(s.uniform());
        total += v;
      }
    if (allow_zero) {
      const double u = s.uniform();
      if (u < 0.15) {
        total -= t[0][1] + t[1][1];
        t[0][1] = t[1][1] = 0.0;
      } else if (u < 0.3) {
        const auto k = s.below(4);
        total -= t[k / 2][k % 2];
        t[k / 2][k % 2] = 0.0;
      }
    }
    for (auto& row : t)
      for (auto& v : row) v /= total;
    // Fold the rounding remainder into the largest cell so the table sums to 1 within 1e-12.
    double sum = 0.0;
    double* big = &t[0][0];
    for (auto& row : t)
      for (auto& v : row) {
        sum += v;
        if (v > *big) big = &v;
      }
    *big += 1.0 - sum;
    return t;
  };
  for (std::size_t i = 0; i < trials; ++i) {
    FinitePair pr(random_table(true), random_table(false));
    const Decomposition d = dpi_gap(pr);
    r.max_identity_residual = std::max(r.max_identity_residual, std::abs(d.identity_residual));
    r.min_kl_gap = std::min(r.min_kl_gap, kl_levels(pr).gap());
    if (d.gap < -1e-6) r.violations.push_back(Violation{pr, d});
  }
  std::sort(r.violations.begin(), r.violations.end(),
            [](const Violation& a, const Violation& b) { return a.decomposition.gap < b.decomposition.gap; });
  return r;
}

}  // namespace dbridge::dpi
