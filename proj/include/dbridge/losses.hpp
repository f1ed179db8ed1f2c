#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbridge/bridge.hpp"

namespace dbridge {

enum class Proposal { on_policy, forward };

inline Proposal parse_proposal(const std::string& s) {
  if (s == "on_policy" || s == "q") return Proposal::on_policy;
  if (s == "forward" || s == "p") return Proposal::forward;
  throw ConfigError("unknown proposal '" + s + "' (expected on_policy or forward)");
}

inline std::string to_string(Proposal p) { return p == Proposal::on_policy ? "on_policy" : "forward"; }

using GradBlock = std::map<std::string, Array>;

struct GradReport {
  GradBlock alpha, phi, nu;
  double baseline = 0.0;
  double log_ratio_mean = 0.0;
  double log_ratio_variance = 0.0;
  std::size_t valid_paths = 0;
  std::size_t invalid_paths = 0;
  std::optional<double> ess;

  const GradBlock& block(Block b) const { return b == Block::alpha ? alpha : b == Block::phi ? phi : nu; }
  GradBlock& block(Block b) { return b == Block::alpha ? alpha : b == Block::phi ? phi : nu; }

  // Gradients aligned with the parameter store; zeros where the report has no entry.
  std::vector<Array> aligned(const ParamStore& store) const {
    std::vector<Array> out;
    for (const auto& p : store.all()) {
      const GradBlock& b = block(p.block);
      auto it = b.find(p.name);
      out.push_back(it != b.end() ? it->second : Array(p.value.shape(), 0.0));
    }
    return out;
  }

  friend bool operator==(const GradReport&, const GradReport&) = default;
};

// Per-path coefficients c_q, c_p such that the estimate is sum_i c_q[i] grad log q_i + c_p[i] grad log p_i.
struct PathCoefficients {
  std::vector<double> on_log_q, on_log_p;
  double baseline = 0.0;
  std::optional<double> ess;
};

namespace detail {

struct Centered {
  double baseline;
  std::vector<double> weight;    // path weight (1/n for Monte Carlo batches)
  std::vector<double> centered;  // weight * (l - baseline)
};

// Baseline b = sum_i w_i l_i. Empty weights mean a Monte Carlo batch: b is the plain mean and
// w_i (l_i - b) is evaluated as (l_i - b) / n.
inline Centered center(std::span<const double> l, std::span<const double> w) {
  const std::size_t n = l.size();
  if (n == 0) throw EstimationError("no valid paths in batch");
  if (!w.empty() && w.size() != n) throw ConfigError("path weights and log-ratios differ in length");
  Centered c;
  c.centered.resize(n);
  c.weight.resize(n);
  if (w.empty()) {
    double s = 0.0;
    for (double v : l) s += v;
    const double dn = static_cast<double>(n);
    c.baseline = s / dn;
    for (std::size_t i = 0; i < n; ++i) {
      c.centered[i] = (l[i] - c.baseline) / dn;
      c.weight[i] = 1.0 / dn;
    }
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * l[i];
    c.baseline = s;
    for (std::size_t i = 0; i < n; ++i) {
      c.centered[i] = w[i] * (l[i] - c.baseline);
      c.weight[i] = w[i];
    }
  }
  return c;
}

}  // namespace detail

// Reverse KL with the log-derivative trick: c_q = w (l - b), c_p = -w.
inline PathCoefficients rkl_ld_coefficients(std::span<const double> log_ratio, std::span<const double> weights = {}) {
  detail::Centered c = detail::center(log_ratio, weights);
  PathCoefficients out;
  out.baseline = c.baseline;
  out.on_log_q = c.centered;
  out.on_log_p.resize(c.weight.size());
  for (std::size_t i = 0; i < c.weight.size(); ++i) out.on_log_p[i] = -c.weight[i];
  return out;
}

// Log-variance loss with a stop-gradient proposal: c_q = w (l - b), c_p = -w (l - b).
inline PathCoefficients lv_coefficients(std::span<const double> log_ratio, std::span<const double> weights = {}) {
  detail::Centered c = detail::center(log_ratio, weights);
  PathCoefficients out;
  out.baseline = c.baseline;
  out.on_log_q = c.centered;
  out.on_log_p.resize(c.centered.size());
  for (std::size_t i = 0; i < c.centered.size(); ++i) out.on_log_p[i] = -c.centered[i];
  return out;
}

// Forward KL through self-normalized importance weights w~_i proportional to w_i exp(-l_i):
// c_q = 0, c_p = -w~ (l - b), with b the (proposal-weighted) baseline.
inline PathCoefficients fkl_nis_coefficients(std::span<const double> log_ratio, std::span<const double> weights = {}) {
  detail::Centered c = detail::center(log_ratio, weights);
  const std::size_t n = log_ratio.size();
  double mx = -INFINITY;
  for (std::size_t i = 0; i < n; ++i)
    if (c.weight[i] > 0 && std::isfinite(log_ratio[i])) mx = std::max(mx, -log_ratio[i]);
  if (!std::isfinite(mx)) throw EstimationError("importance weights are all zero or undefined");
  std::vector<double> r(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = c.weight[i] * std::exp(-log_ratio[i] - mx);
    total += r[i];
  }
  if (!(total > 0) || !std::isfinite(total)) throw EstimationError("importance weights are all zero or undefined");
  PathCoefficients out;
  out.baseline = c.baseline;
  out.on_log_q.assign(n, 0.0);
  out.on_log_p.resize(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wn = r[i] / total;
    sq += wn * wn;
    out.on_log_p[i] = -wn * (log_ratio[i] - c.baseline);
  }
  out.ess = 1.0 / sq;
  return out;
}

namespace detail {

inline constexpr std::size_t kGradChunk = 128;

inline bool any_nonzero(std::span<const double> v, std::size_t r0, std::size_t r1) {
  for (std::size_t i = r0; i < r1; ++i)
    if (v[i] != 0.0) return true;
  return false;
}

}  // namespace detail

// sum_i c_q[i] grad log q_joint(path i) + c_p[i] grad log p_joint(path i) with states held fixed,
// aligned with the parameter store. One work unit per time index; units reduce in index order.
inline std::vector<Array> weighted_log_density_gradient(const BridgeModel& m, const TargetDensity& target,
                                                        const TrajectoryBatch& b, std::span<const double> cq,
                                                        std::span<const double> cp) {
  if (cq.size() != b.batch || cp.size() != b.batch) throw ConfigError("coefficient count differs from batch size");
  const std::size_t T = m.steps();
  std::vector<std::vector<Array>> unit(T + 1);
  parallel_for(T + 1, [&](std::size_t t) {
    using namespace ad;
    Tape tape;
    BoundModel bm(tape, m, true);
    const std::size_t mark = tape.size();
    for (std::size_t r0 = 0; r0 < b.batch; r0 += detail::kGradChunk) {
      const std::size_t r1 = std::min(b.batch, r0 + detail::kGradChunk);
      const bool want_q = t >= 1 && detail::any_nonzero(cq, r0, r1);
      const bool want_p = t < T && detail::any_nonzero(cp, r0, r1);
      const bool want_prior = t == T && detail::any_nonzero(cq, r0, r1);
      if (!want_q && !want_p && !want_prior) continue;
      tape.truncate(mark);
      Var x = tape.constant(detail::rows_of(b.states[t], r0, r1));
      Drifts d = compute_drifts(bm, target, x, t, want_q, want_p);
      Var wq = tape.constant(Array::vector(std::vector<double>(cq.begin() + r0, cq.begin() + r1)));
      Var wp = tape.constant(Array::vector(std::vector<double>(cp.begin() + r0, cp.begin() + r1)));
      std::vector<Var> terms;
      if (want_q) {
        Var prev = tape.constant(detail::rows_of(b.states[t - 1], r0, r1));
        terms.push_back(sum(mul(wq, log_gaussian_step(prev, x, d.reverse, bm.log_sigma, m.dt()))));
      }
      if (want_p) {
        Var next = tape.constant(detail::rows_of(b.states[t + 1], r0, r1));
        terms.push_back(sum(mul(wp, log_gaussian_step(next, x, d.forward, bm.log_sigma, m.dt()))));
      }
      if (want_prior) terms.push_back(sum(mul(wq, prior_log_density(x, bm.prior_mean, bm.prior_log_std))));
      Var root = terms[0];
      for (std::size_t k = 1; k < terms.size(); ++k) root = add(root, terms[k]);
      tape.backward(root);
    }
    unit[t] = bm.params.gradients();
  });
  std::vector<Array> total = unit[0];
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t k = 0; k < total.size(); ++k)
      for (std::size_t e = 0; e < total[k].size(); ++e) total[k][e] += unit[t][k][e];
  return total;
}

namespace detail {

struct BlockMask {
  bool alpha = true, phi = true, nu = true;
  bool has(Block b) const { return b == Block::alpha ? alpha : b == Block::phi ? phi : nu; }
};

inline void fill_stats(GradReport& r, const std::vector<double>& l) {
  const double n = static_cast<double>(l.size());
  double s = 0.0;
  for (double v : l) s += v;
  r.log_ratio_mean = s / n;
  double v2 = 0.0;
  for (double v : l) v2 += (v - r.log_ratio_mean) * (v - r.log_ratio_mean);
  r.log_ratio_variance = v2 / n;
}

inline GradReport make_report(const BridgeModel& m, const std::vector<Array>& grads, BlockMask mask) {
  GradReport r;
  const auto& ps = m.params().all();
  for (std::size_t k = 0; k < ps.size(); ++k)
    if (ps[k].learnable && mask.has(ps[k].block)) r.block(ps[k].block)[ps[k].name] = grads[k];
  return r;
}

inline GradReport estimate(const BridgeModel& m, const TargetDensity& target, const TrajectoryBatch& batch,
                           PathCoefficients (*coef)(std::span<const double>, std::span<const double>), BlockMask mask) {
  const TrajectoryBatch valid = batch.valid_only();
  if (valid.batch == 0) throw EstimationError("no valid paths in batch");
  const std::vector<double> l = valid.log_ratio();
  PathCoefficients c = coef(l, {});
  GradReport r = make_report(m, weighted_log_density_gradient(m, target, valid, c.on_log_q, c.on_log_p), mask);
  r.baseline = c.baseline;
  r.ess = c.ess;
  fill_stats(r, l);
  r.valid_paths = valid.batch;
  r.invalid_paths = batch.invalid_count();
  return r;
}

inline void require_on_policy(const TrajectoryBatch& b) {
  if (b.source != PathSource::reverse) throw ConfigError("estimator needs a batch simulated from the reverse process");
}

}  // namespace detail

// alpha: mean (l - b) grad_alpha log q; phi: -mean grad_phi log p; nu: both terms.
inline GradReport grad_rkl_ld(const BridgeModel& m, const TargetDensity& target, const TrajectoryBatch& batch) {
  detail::require_on_policy(batch);
  return detail::estimate(m, target, batch, rkl_ld_coefficients, {});
}

// Gradient of 1/2 Var_omega[l] with omega held fixed: mean (l - b) (grad log q - grad log p).
inline GradReport grad_lv(const BridgeModel& m, const TargetDensity& target, const TrajectoryBatch& batch,
                          Proposal proposal = Proposal::on_policy) {
  if (proposal == Proposal::on_policy) {
    detail::require_on_policy(batch);
  } else {
    if (!target.has_sampler()) throw ConfigError("forward proposal needs a target with an exact sampler");
    if (batch.source != PathSource::forward) throw ConfigError("forward proposal needs forward-simulated paths");
  }
  return detail::estimate(m, target, batch, lv_coefficients, {});
}

// 1/2 * mean((l - mean l)^2) over valid paths.
inline double lv_loss_value(const TrajectoryBatch& batch) {
  const TrajectoryBatch valid = batch.valid_only();
  if (valid.batch == 0) throw EstimationError("no valid paths in batch");
  const std::vector<double> l = valid.log_ratio();
  GradReport r;
  detail::fill_stats(r, l);
  return 0.5 * r.log_ratio_variance;
}

// Self-normalized importance-sampling estimate of the forward-KL gradient in the phi block.
inline GradReport grad_fkl_nis(const BridgeModel& m, const TargetDensity& target, const TrajectoryBatch& batch) {
  detail::require_on_policy(batch);
  return detail::estimate(m, target, batch, fkl_nis_coefficients, {false, true, false});
}

// Pathwise gradient of mean l: the simulation is replayed on tapes so gradients flow through every
// Euler step, the prior draw and the target density at X_0.
inline GradReport grad_rkl_r(const BridgeModel& m, const TargetDensity& target, std::size_t batch, std::uint64_t seed) {
  const TrajectoryBatch sim = simulate_reverse(m, target, batch, seed);
  const TrajectoryBatch valid = sim.valid_only();
  if (valid.batch == 0) throw EstimationError("no valid paths in batch");
  const std::size_t T = m.steps(), N = m.dim();
  constexpr std::size_t chunk = 32;
  const std::size_t units = (valid.batch + chunk - 1) / chunk;
  const double inv_n = 1.0 / static_cast<double>(valid.batch);
  std::vector<std::vector<Array>> unit(units);
  std::vector<std::vector<double>> replay(units);
  parallel_for(units, [&](std::size_t u) {
    using namespace ad;
    const std::size_t r0 = u * chunk, r1 = std::min(valid.batch, r0 + chunk);
    Tape tape;
    BoundModel bm(tape, m, true);
    Array z = detail::noise_block(sim.seed, valid.path_ids, r0, r1, N, rng::Purpose::prior, 0);
    Var x = add_row(mul_row(tape.constant(z), exp(bm.prior_log_std)), bm.prior_mean);
    Var l = prior_log_density(x, bm.prior_mean, bm.prior_log_std);
    Var above;  // X_{t+1}
    for (std::size_t t = T + 1; t-- > 0;) {
      Drifts d = compute_drifts(bm, target, x, t, t >= 1, t < T);
      if (t < T) l = sub(l, log_gaussian_step(above, x, d.forward, bm.log_sigma, m.dt()));
      if (t == 0) break;
      Array eps = detail::noise_block(sim.seed, valid.path_ids, r0, r1, N, rng::Purpose::reverse_step, t);
      Var prev = euler_step(x, d.reverse, bm.sigma, tape.constant(std::move(eps)), m.dt());
      l = add(l, log_gaussian_step(prev, x, d.reverse, bm.log_sigma, m.dt()));
      above = x;
      x = prev;
    }
    l = sub(l, target_log_density(target, x));
    replay[u] = l.value().values();
    tape.backward(scale(sum(l), inv_n));
    unit[u] = bm.params.gradients();
  });
  std::vector<Array> total = unit[0];
  for (std::size_t u = 1; u < units; ++u)
    for (std::size_t k = 0; k < total.size(); ++k)
      for (std::size_t e = 0; e < total[k].size(); ++e) total[k][e] += unit[u][k][e];
  std::vector<double> l;
  for (auto& v : replay) l.insert(l.end(), v.begin(), v.end());
  GradReport r = detail::make_report(m, total, {});
  detail::fill_stats(r, l);
  r.baseline = r.log_ratio_mean;
  r.valid_paths = valid.batch;
  r.invalid_paths = sim.invalid_count();
  return r;
}

}  // namespace dbridge
