#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dbridge/bridge.hpp"
#include "dbridge/core/parallel.hpp"

namespace dbridge {

struct ElboEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t paths = 0;
};

// Mean of log(p_joint / q_joint) = -log_ratio over valid paths. Computed as -(sum l / n), the same
// expression the estimators use for their baseline.
inline ElboEstimate elbo(const TrajectoryBatch& batch) {
  const TrajectoryBatch valid = batch.valid_only();
  if (valid.batch == 0) throw EstimationError("no valid paths in batch");
  const std::vector<double> l = valid.log_ratio();
  double s = 0.0;
  for (double v : l) s += v;
  const double n = static_cast<double>(l.size());
  const double mean = s / n;
  ElboEstimate e;
  e.value = -mean;
  e.paths = l.size();
  if (l.size() > 1) {
    double v2 = 0.0;
    for (double v : l) v2 += (v - mean) * (v - mean);
    e.standard_error = std::sqrt(v2 / (n - 1.0) / n);
  }
  return e;
}

namespace detail {

inline void check_sample_sets(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ConfigError("sample sets must be (n x d) matrices");
  if (a.rows() == 0 || b.rows() == 0) throw ConfigError("sample sets must be non-empty");
  if (a.cols() != b.cols()) throw ConfigError("sample sets differ in dimension");
}

// ||a_i - b_j||^2 as an (n x m) matrix, rows computed in parallel.
inline Array squared_distances(const Array& a, const Array& b) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  Array c(Shape{n, m});
  parallel_for(n, [&](std::size_t i) {
    const double* x = &a(i, 0);
    for (std::size_t j = 0; j < m; ++j) {
      const double* y = &b(j, 0);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      c(i, j) = s;
    }
  });
  return c;
}

}  // namespace detail

struct SinkhornOptions {
  double epsilon = 0.0;  // <= 0: 1e-3 x mean pairwise cost of the cross term
  double tolerance = 1e-6;  // L1 violation of the plan's marginals
  std::size_t max_iterations = 5000;
  double scaling = 0.5;  // epsilon annealing factor per stage
  double stage_tolerance = 1e-3;
};

struct OtResult {
  double cost = 0.0;  // entropic OT value at convergence (dual objective)
  std::size_t iterations = 0;
  bool converged = false;
};

struct SinkhornResult {
  double divergence = 0.0;  // OT(a,b) - OT(a,a)/2 - OT(b,b)/2
  double raw_cost = 0.0;    // OT(a,b)
  double epsilon = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
};

namespace detail {

inline constexpr double kExpFloor = -745.2;

// -eps log sum_j exp(log w + (h_j - C_j)/eps) over one contiguous cost row, stabilized by `shift`
// (the previous potential over eps); falls back to an exact max pass on under- or overflow.
inline double soft_min(const double* cost, const std::vector<double>& h, double log_w, double eps, double shift) {
  const std::size_t m = h.size();
  const double inv = 1.0 / eps;
  // exp underflows to exactly 0 below kExpFloor, so those terms are skipped without changing the sum.
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double t = (h[j] - cost[j]) * inv + shift;
    if (t > kExpFloor) s += std::exp(t);
  }
  if (s > 0 && std::isfinite(s)) return -eps * (log_w + std::log(s) - shift);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, (h[j] - cost[j]) * inv);
  s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double t = (h[j] - cost[j]) * inv - mx;
    if (t > kExpFloor) s += std::exp(t);
  }
  return -eps * (log_w + mx + std::log(s));
}

inline Array transpose(const Array& a) {
  Array t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double max_value(const Array& c) {
  double mx = 0.0;
  for (double v : c.values()) mx = std::max(mx, v);
  return mx;
}

}  // namespace detail

// Entropic OT between uniform empirical measures with squared Euclidean cost, solved with log-domain
// Sinkhorn updates and epsilon annealing from the largest cost down to `epsilon`. Converged when the
// plan's marginals are within `tolerance` in L1.
inline OtResult entropic_ot(const Array& a, const Array& b, double epsilon, const SinkhornOptions& opt) {
  detail::check_sample_sets(a, b);
  if (!(epsilon > 0)) throw ConfigError("sinkhorn epsilon must be positive");
  const Array c = detail::squared_distances(a, b);
  const Array ct = detail::transpose(c);
  const std::size_t n = a.rows(), m = b.rows();
  const double log_a = -std::log(static_cast<double>(n)), log_b = -std::log(static_cast<double>(m));
  std::vector<double> f(n, 0.0), g(m, 0.0), err(m);

  auto update_f = [&](double eps) {
    parallel_for(n, [&](std::size_t i) { f[i] = detail::soft_min(&c(i, 0), g, log_b, eps, f[i] / eps); });
  };
  // Before the update the plan's column sums are b exp((g_old - g_new)/eps).
  auto update_g = [&](double eps) {
    parallel_for(m, [&](std::size_t j) {
      const double v = detail::soft_min(&ct(j, 0), f, log_a, eps, g[j] / eps);
      err[j] = std::abs(std::expm1((g[j] - v) / eps)) / static_cast<double>(m);
      g[j] = v;
    });
    double e = 0.0;
    for (double v : err) e += v;
    return e;
  };

  // Each annealing stage runs until its marginals settle to `stage_tolerance`; the final stage to
  // `tolerance`. All stages share the iteration budget.
  OtResult r;
  double eps = std::max(detail::max_value(c), epsilon);
  for (;;) {
    const bool last = eps <= epsilon;
    const double tol = last ? opt.tolerance : opt.stage_tolerance;
    while (r.iterations < opt.max_iterations) {
      update_f(eps);
      const double e = update_g(eps);
      ++r.iterations;
      if (e <= tol) {
        r.converged = last;
        break;
      }
    }
    if (last || r.iterations >= opt.max_iterations) break;
    eps = std::max(eps * opt.scaling, epsilon);
  }
  double sf = 0.0, sg = 0.0;
  for (double v : f) sf += v;
  for (double v : g) sg += v;
  r.cost = sf / static_cast<double>(n) + sg / static_cast<double>(m);
  return r;
}

// OT(a, a) with the symmetric averaged update f <- (f + T(f)) / 2, which converges much faster than
// alternating updates on a self-transport problem.
inline OtResult entropic_ot_self(const Array& a, double epsilon, const SinkhornOptions& opt) {
  detail::check_sample_sets(a, a);
  if (!(epsilon > 0)) throw ConfigError("sinkhorn epsilon must be positive");
  const Array c = detail::squared_distances(a, a);
  const std::size_t n = a.rows();
  const double log_a = -std::log(static_cast<double>(n));
  std::vector<double> f(n, 0.0), next(n), err(n);

  // Row sums of the symmetric plan are a exp((f - T(f))/eps).
  auto step = [&](double eps) {
    parallel_for(n, [&](std::size_t i) {
      next[i] = detail::soft_min(&c(i, 0), f, log_a, eps, f[i] / eps);
      err[i] = std::abs(std::expm1((f[i] - next[i]) / eps)) / static_cast<double>(n);
    });
    for (std::size_t i = 0; i < n; ++i) f[i] = 0.5 * (f[i] + next[i]);
    double e = 0.0;
    for (double v : err) e += v;
    return e;
  };

  OtResult r;
  double eps = std::max(detail::max_value(c), epsilon);
  while (eps > epsilon) {
    step(eps);
    ++r.iterations;
    eps = std::max(eps * opt.scaling, epsilon);
  }
  while (r.iterations < opt.max_iterations) {
    const double e = step(epsilon);
    ++r.iterations;
    if (e <= opt.tolerance) {
      r.converged = true;
      break;
    }
  }
  // Dual value at the fixed point, 2 <a, f>, evaluated with one final exact update.
  parallel_for(n, [&](std::size_t i) { next[i] = detail::soft_min(&c(i, 0), f, log_a, epsilon, f[i] / epsilon); });
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += 0.5 * (f[i] + next[i]);
  r.cost = 2.0 * s / static_cast<double>(n);
  return r;
}

inline double default_sinkhorn_epsilon(const Array& a, const Array& b) {
  detail::check_sample_sets(a, b);
  const Array c = detail::squared_distances(a, b);
  double s = 0.0;
  for (double v : c.values()) s += v;
  const double mean = s / static_cast<double>(c.size());
  return mean > 0 ? 1e-3 * mean : 1e-3;
}

inline SinkhornResult sinkhorn_divergence(const Array& a, const Array& b, SinkhornOptions opt = {}) {
  detail::check_sample_sets(a, b);
  SinkhornResult r;
  r.epsilon = opt.epsilon > 0 ? opt.epsilon : default_sinkhorn_epsilon(a, b);
  const OtResult aa = entropic_ot_self(a, r.epsilon, opt);
  const OtResult bb = a == b ? aa : entropic_ot_self(b, r.epsilon, opt);
  // Identical sets are a self-transport problem; the cross term then reuses the self value.
  const OtResult ab = a == b ? aa : entropic_ot(a, b, r.epsilon, opt);
  r.raw_cost = ab.cost;
  r.divergence = ab.cost - 0.5 * aa.cost - 0.5 * bb.cost;
  r.iterations = ab.iterations + aa.iterations + bb.iterations;
  r.converged = ab.converged && aa.converged && bb.converged;
  return r;
}

// Ten bandwidths spanning one decade with geometric mean 100.
inline std::vector<double> mmd_bandwidths() {
  std::vector<double> k;
  for (int i = 1; i <= 10; ++i) k.push_back(100.0 * std::pow(10.0, (i - 5.5) / 9.0));
  return k;
}

// Mean of sum_i exp(-||x - y||^2 / kappa_i^2) over all pairs.
inline double mean_kernel(const Array& a, const Array& b) {
  const Array c = detail::squared_distances(a, b);
  std::vector<double> inv;
  for (double k : mmd_bandwidths()) inv.push_back(1.0 / (k * k));
  std::vector<double> rows(a.rows());
  parallel_for(a.rows(), [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < b.rows(); ++j)
      for (double w : inv) s += std::exp(-c(i, j) * w);
    rows[i] = s;
  });
  double s = 0.0;
  for (double v : rows) s += v;
  return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

struct MmdResult {
  double value = 0.0;
  bool clamped = false;  // a negative radicand from rounding was set to zero
};

// Square root of the biased (V-statistic) squared MMD.
inline MmdResult mmd(const Array& a, const Array& b) {
  detail::check_sample_sets(a, b);
  const double sq = mean_kernel(a, a) + mean_kernel(b, b) - 2.0 * mean_kernel(a, b);
  MmdResult r;
  if (sq < 0) {
    r.clamped = true;
    return r;
  }
  r.value = std::sqrt(sq);
  return r;
}

// Entropy of the mode-assignment histogram in base M: 1 when all M modes are hit equally, 0 when one
// mode takes every sample.
inline double emc(const std::vector<std::size_t>& assignment, std::size_t modes) {
  if (modes == 0) throw ConfigError("mode list is empty");
  if (assignment.empty()) throw ConfigError("no samples to assign");
  if (modes == 1) return 1.0;
  std::vector<double> counts(modes, 0.0);
  for (auto k : assignment) {
    if (k >= modes) throw ConfigError("mode index out of range");
    counts[k] += 1.0;
  }
  const double n = static_cast<double>(assignment.size());
  double h = 0.0;
  for (double c : counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  return h / std::log(static_cast<double>(modes));
}

// Same, from a probability histogram.
inline double emc_from_histogram(const std::vector<double>& p) {
  if (p.empty()) throw ConfigError("mode list is empty");
  if (p.size() == 1) return 1.0;
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h / std::log(static_cast<double>(p.size()));
}

inline double emc(const TargetDensity& target, const Array& samples) {
  return emc(target.assign_modes(samples), target.mode_count());
}

}  // namespace dbridge
