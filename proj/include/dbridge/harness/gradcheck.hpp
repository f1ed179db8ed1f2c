#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dbridge/autodiff/ops.hpp"
#include "dbridge/bridge.hpp"
#include "dbridge/lab/two_point_chain.hpp"
#include "dbridge/losses.hpp"
#include "dbridge/targets/registry.hpp"

namespace dbridge::check {

struct CheckResult {
  std::string name;
  double error = 0.0;  // relative (norm-wise) error, or max abs error for enumeration checks
  double tolerance = 0.0;
  bool passed() const { return std::isfinite(error) && error <= tolerance; }
};

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||); exact zeros on both sides count as agreement.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm2(a), norm2(b));
  return scale == 0.0 ? 0.0 : norm2(d) / scale;
}

// ---- raw tape ops ----

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Compares reverse-mode gradients of sum(W * f(inputs)) with central differences over every input entry.
inline double op_gradient_error(const std::vector<Array>& inputs, const Builder& f, std::uint64_t seed) {
  using namespace ad;
  Array weights;
  {
    Tape probe;
    std::vector<Var> vs;
    for (const auto& a : inputs) vs.push_back(probe.constant(a));
    weights = Array(f(probe, vs).value().shape());
    rng::Stream s(seed, 99, rng::Purpose::data);
    for (auto& w : weights.values()) w = s.uniform(0.5, 1.5);
  }
  auto value = [&](const std::vector<Array>& in) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& a : in) vs.push_back(t.constant(a));
    return sum(mul(f(t, vs), t.constant(weights))).value().item();
  };
  std::vector<double> analytic, numeric;
  {
    Tape t;
    std::vector<Var> vs;
    for (const auto& a : inputs) vs.push_back(t.leaf(a));
    t.backward(sum(mul(f(t, vs), t.constant(weights))));
    for (const auto& v : vs) {
      const Array g = v.grad();
      analytic.insert(analytic.end(), g.values().begin(), g.values().end());
    }
  }
  std::vector<Array> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k)
    for (std::size_t e = 0; e < work[k].size(); ++e) {
      const double x0 = work[k][e];
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      work[k][e] = x0 + h;
      const double up = value(work);
      work[k][e] = x0 - h;
      const double dn = value(work);
      work[k][e] = x0;
      numeric.push_back((up - dn) / (2.0 * h));
    }
  return relative_error(analytic, numeric);
}

inline Array random_array(Shape shape, std::uint64_t seed, double lo, double hi) {
  Array a(std::move(shape));
  rng::Stream s(seed, 7, rng::Purpose::data);
  for (auto& v : a.values()) v = s.uniform(lo, hi);
  return a;
}

inline std::vector<CheckResult> raw_op_checks(double tol = 1e-6) {
  using namespace ad;
  using V = const std::vector<Var>&;
  const Array A = random_array({3, 4}, 1, -2.0, 2.0);
  const Array B = random_array({3, 4}, 2, -2.0, 2.0);
  const Array P = random_array({3, 4}, 3, 0.5, 2.0);  // positive
  const Array W = random_array({4, 5}, 4, -1.0, 1.0);
  const Array v4 = random_array({4}, 5, -1.0, 1.0);
  const Array v3 = random_array({3}, 6, -1.0, 1.0);
  const Array s0 = Array::scalar(0.7);
  struct Case {
    std::string name;
    std::vector<Array> in;
    Builder f;
  };
  const std::vector<Case> cases = {
      {"add", {A, B}, [](Tape&, V v) { return add(v[0], v[1]); }},
      {"add_scalar", {A, s0}, [](Tape&, V v) { return add(v[0], v[1]); }},
      {"sub", {A, B}, [](Tape&, V v) { return sub(v[0], v[1]); }},
      {"mul", {A, B}, [](Tape&, V v) { return mul(v[0], v[1]); }},
      {"mul_scalar", {s0, A}, [](Tape&, V v) { return mul(v[0], v[1]); }},
      {"div", {A, P}, [](Tape&, V v) { return div(v[0], v[1]); }},
      {"maximum", {A, B}, [](Tape&, V v) { return maximum(v[0], v[1]); }},
      {"scale", {A}, [](Tape&, V v) { return scale(v[0], -1.7); }},
      {"shift", {A}, [](Tape&, V v) { return shift(v[0], 0.3); }},
      {"neg", {A}, [](Tape&, V v) { return neg(v[0]); }},
      {"exp", {A}, [](Tape&, V v) { return exp(v[0]); }},
      {"log", {P}, [](Tape&, V v) { return log(v[0]); }},
      {"sqrt", {P}, [](Tape&, V v) { return sqrt(v[0]); }},
      {"tanh", {A}, [](Tape&, V v) { return tanh(v[0]); }},
      {"square", {A}, [](Tape&, V v) { return square(v[0]); }},
      {"sigmoid", {A}, [](Tape&, V v) { return sigmoid(v[0]); }},
      {"softplus", {A}, [](Tape&, V v) { return softplus(v[0]); }},
      {"silu", {A}, [](Tape&, V v) { return silu(v[0]); }},
      {"clip", {A}, [](Tape&, V v) { return clip(v[0], -1.05, 1.15); }},
      {"sum", {A}, [](Tape&, V v) { return sum(v[0]); }},
      {"mean", {A}, [](Tape&, V v) { return mean(v[0]); }},
      {"row_sum", {A}, [](Tape&, V v) { return row_sum(v[0]); }},
      {"add_row", {A, v4}, [](Tape&, V v) { return add_row(v[0], v[1]); }},
      {"mul_row", {A, v4}, [](Tape&, V v) { return mul_row(v[0], v[1]); }},
      {"matmul_2d_2d", {A, W}, [](Tape&, V v) { return matmul(v[0], v[1]); }},
      {"matmul_1d_2d", {v4, W}, [](Tape&, V v) { return matmul(v[0], v[1]); }},
      {"matmul_2d_1d", {A, v4}, [](Tape&, V v) { return matmul(v[0], v[1]); }},
      {"matmul_1d_1d", {v3, v3}, [](Tape&, V v) { return matmul(v[0], v[1]); }},
      {"concat_rows", {A, B}, [](Tape&, V v) { return concat({v[0], v[1]}, 0); }},
      {"concat_cols", {A, W}, [](Tape&, V v) { return concat({v[0], matmul(v[0], v[1])}, 1); }},
      {"slice_rows", {A}, [](Tape&, V v) { return slice(v[0], 1, 3); }},
      {"slice_vector", {v4}, [](Tape&, V v) { return slice(v[0], 1, 3); }},
      {"composite", {A, W, v4}, [](Tape&, V v) {
         return silu(add_row(matmul(tanh(v[0]), v[1]), slice(concat({v[2], v[2]}, 0), 2, 7)));
       }},
  };
  std::vector<CheckResult> out;
  std::uint64_t seed = 10;
  for (const auto& c : cases) out.push_back({"op/" + c.name, op_gradient_error(c.in, c.f, seed++), tol});
  return out;
}

// ---- model-level checks ----

// Adds N(0, scale^2) noise to every parameter so zero-initialized output layers carry signal.
inline void perturb(ParamStore& store, std::uint64_t seed, double scale) {
  for (auto& p : store.all()) {
    rng::Stream s(seed, name_hash(p.name), rng::Purpose::init);
    for (auto& v : p.value.values()) v += scale * s.normal();
  }
}

inline BridgeModel small_model(Parameterization kind, std::size_t dim, std::size_t steps, std::uint64_t seed,
                               bool learn_sigma = true) {
  BridgeConfig c;
  c.kind = kind;
  c.dim = dim;
  c.steps = steps;
  c.hidden = 8;
  c.embed = 8;
  c.sigma_init = 0.8;
  c.prior_std_init = 1.3;
  c.learn_sigma = kind == Parameterization::fixed_forward ? false : learn_sigma;
  c.init_seed = seed;
  BridgeModel m(c);
  perturb(m.params(), seed + 17, 0.1);
  return m;
}

// Central differences of `f` over every learnable parameter entry, aligned with the store.
inline std::vector<double> param_fd(BridgeModel& m, const std::function<double(const BridgeModel&)>& f,
                                    double rel_step = 1e-6) {
  std::vector<double> out;
  for (auto& p : m.params().all()) {
    if (!p.learnable) continue;
    for (auto& x : p.value.values()) {
      const double x0 = x;
      const double h = rel_step * std::max(1.0, std::abs(x0));
      x = x0 + h;
      const double up = f(m);
      x = x0 - h;
      const double dn = f(m);
      x = x0;
      out.push_back((up - dn) / (2.0 * h));
    }
  }
  return out;
}

inline std::vector<double> learnable_flat(const BridgeModel& m, const std::vector<Array>& grads) {
  std::vector<double> out;
  for (std::size_t k = 0; k < grads.size(); ++k)
    if (m.params()[k].learnable) out.insert(out.end(), grads[k].values().begin(), grads[k].values().end());
  return out;
}

// Tape gradient of sum(W * g(model)) over parameters, compared with central differences.
inline double model_gradient_error(BridgeModel& m, const std::function<ad::Var(const BoundModel&)>& g,
                                   std::uint64_t seed) {
  Array weights;
  {
    ad::Tape t;
    BoundModel bm(t, m, false);
    weights = Array(g(bm).value().shape());
    rng::Stream s(seed, 98, rng::Purpose::data);
    for (auto& w : weights.values()) w = s.uniform(0.5, 1.5);
  }
  auto value = [&](const BridgeModel& mm) {
    ad::Tape t;
    BoundModel bm(t, mm, false);
    return ad::sum(ad::mul(g(bm), t.constant(weights))).value().item();
  };
  std::vector<double> analytic;
  {
    ad::Tape t;
    BoundModel bm(t, m, true);
    t.backward(ad::sum(ad::mul(g(bm), t.constant(weights))));
    analytic = learnable_flat(m, bm.params.gradients());
  }
  return relative_error(analytic, param_fd(m, value));
}

// Score and Hessian-vector product of a target against differences of its energy / score.
inline double target_derivative_error(const TargetDensity& target, std::uint64_t seed, bool hvp) {
  const std::size_t n = 4, d = target.dim();
  Array x(Shape{n, d}), v(Shape{n, d});
  rng::Stream s(seed, 5, rng::Purpose::data);
  for (auto& e : x.values()) e = 1.2 * s.normal();
  for (auto& e : v.values()) e = s.normal();
  std::vector<double> analytic, numeric;
  if (hvp) {
    const Array h = target.score_hvp(x, v);
    analytic = h.values();
    const double eps = 1e-6;
    Array xp = x, xm = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
      xp[k] += eps * v[k];
      xm[k] -= eps * v[k];
    }
    const Array sp = target.score(xp), sm = target.score(xm);
    for (std::size_t k = 0; k < x.size(); ++k) numeric.push_back((sp[k] - sm[k]) / (2.0 * eps));
  } else {
    analytic = target.score(x).values();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
      Array xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const std::size_t row = k / d;
      numeric.push_back(-(target.energy(xp)[row] - target.energy(xm)[row]) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

inline std::vector<CheckResult> model_checks(double tol = 1e-4) {
  std::vector<CheckResult> out;
  const TargetPtr gmm = make_target("gmm:d=2,m=4,halfwidth=3,seed=2");
  const TargetPtr funnel = make_target("funnel:d=3");
  const TargetPtr brown = make_target("brownian");
  const TargetPtr well = make_target("manywell:d=3,m=2");

  for (const auto& [label, t] : std::vector<std::pair<std::string, TargetPtr>>{
           {"gmm", gmm}, {"funnel", funnel}, {"brownian", brown}, {"manywell", well}}) {
    out.push_back({"target/" + label + "/score", target_derivative_error(*t, 3, false), tol});
    out.push_back({"target/" + label + "/hvp", target_derivative_error(*t, 4, true), tol});
  }

  Array x(Shape{5, 2});
  {
    rng::Stream s(8, 0, rng::Purpose::data);
    for (auto& e : x.values()) e = 1.5 * s.normal();
  }
  std::uint64_t seed = 40;
  for (Parameterization kind : {Parameterization::dbs, Parameterization::cmcd}) {
    const std::string k = to_string(kind);
    BridgeModel m = small_model(kind, 2, 4, seed++);
    const ScoreNetIndex net = kind == Parameterization::cmcd ? m.control_net() : m.reverse_net();
    out.push_back({"net/" + k + "/score_network",
                   model_gradient_error(m,
                                        [&](const BoundModel& bm) {
                                          ad::Tape& t = bm.tape();
                                          return score_forward(bind_score_net(bm.params, net), t.constant(x), 0.375,
                                                               target_score(*gmm, t.constant(x)));
                                        },
                                        seed++),
                   tol});
    for (std::size_t step : {std::size_t{0}, std::size_t{2}, std::size_t{4}}) {
      out.push_back({"net/" + k + "/drifts_t" + std::to_string(step),
                     model_gradient_error(m,
                                          [&, step](const BoundModel& bm) {
                                            ad::Tape& t = bm.tape();
                                            Drifts d = compute_drifts(bm, *gmm, t.constant(x), step, step >= 1, step < 4);
                                            if (!d.reverse.valid()) return d.forward;
                                            if (!d.forward.valid()) return d.reverse;
                                            return ad::concat({d.reverse, d.forward}, 1);
                                          },
                                          seed++),
                     tol});
    }
    out.push_back({"net/" + k + "/prior_log_density",
                   model_gradient_error(m,
                                        [&](const BoundModel& bm) {
                                          return prior_log_density(bm.tape().constant(x), bm.prior_mean,
                                                                   bm.prior_log_std);
                                        },
                                        seed++),
                   tol});

    // Transition densities with both states held fixed.
    Array y = x;
    for (auto& e : y.values()) e = 0.9 * e + 0.2;
    out.push_back({"transition/" + k + "/reverse",
                   model_gradient_error(m,
                                        [&](const BoundModel& bm) {
                                          ad::Tape& t = bm.tape();
                                          ad::Var xt = t.constant(x);
                                          Drifts d = compute_drifts(bm, *gmm, xt, 3, true, false);
                                          return log_gaussian_step(t.constant(y), xt, d.reverse, bm.log_sigma,
                                                                   bm.model->dt());
                                        },
                                        seed++),
                   tol});
    out.push_back({"transition/" + k + "/forward",
                   model_gradient_error(m,
                                        [&](const BoundModel& bm) {
                                          ad::Tape& t = bm.tape();
                                          ad::Var xp = t.constant(x);
                                          Drifts d = compute_drifts(bm, *gmm, xp, 2, false, true);
                                          return log_gaussian_step(t.constant(y), xp, d.forward, bm.log_sigma,
                                                                   bm.model->dt());
                                        },
                                        seed++),
                   tol});

    // lv_loss_value on a frozen batch against grad_lv on the same batch.
    const TrajectoryBatch frozen = simulate_reverse(m, *gmm, 24, 11);
    const GradReport rep = grad_lv(m, *gmm, frozen);
    const std::vector<double> analytic = learnable_flat(m, rep.aligned(m.params()));
    const std::vector<double> numeric = param_fd(m, [&](const BridgeModel& mm) {
      return lv_loss_value(recompute_log_densities(mm, *gmm, frozen));
    });
    out.push_back({"loss/" + k + "/lv_value_vs_grad_lv", relative_error(analytic, numeric), tol});

    // Pathwise rKL gradient against differences of the reparameterized objective (noise held fixed).
    const GradReport rr = grad_rkl_r(m, *gmm, 16, 12);
    const std::vector<double> pathwise = learnable_flat(m, rr.aligned(m.params()));
    const std::vector<double> fd = param_fd(m, [&](const BridgeModel& mm) {
      const std::vector<double> l = simulate_reverse(mm, *gmm, 16, 12).log_ratio();
      double s = 0.0;
      for (double v : l) s += v;
      return s / static_cast<double>(l.size());
    });
    out.push_back({"loss/" + k + "/rkl_r_vs_reparameterized_value", relative_error(pathwise, fd), tol});
  }
  return out;
}

// ---- estimator identity ----

struct EquivalenceResult {
  Parameterization kind{};
  bool reports_equal = false;  // whole GradReport, bit for bit
  bool alpha_equal = false;    // alpha block, bit for bit
  std::size_t alpha_entries = 0;
  double seconds = 0.0;
};

// On-policy LV and rKL-LD on one shared batch. With the forward process frozen the two reports must be
// identical; otherwise the reverse-only (alpha) block must be.
inline EquivalenceResult gradient_equivalence(Parameterization kind, std::size_t batch = 256, std::size_t steps = 16,
                                              std::size_t dim = 2, std::uint64_t seed = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  const TargetPtr target = make_target("gmm:d=" + std::to_string(dim) + ",m=4,halfwidth=3,seed=1");
  BridgeConfig c;
  c.kind = kind;
  c.dim = dim;
  c.steps = steps;
  c.init_seed = seed;
  if (kind != Parameterization::fixed_forward) c.learn_sigma = true;
  BridgeModel m(c);
  perturb(m.params(), seed + 1, 0.05);
  const TrajectoryBatch b = simulate_reverse(m, *target, batch, seed + 2);
  const GradReport ld = grad_rkl_ld(m, *target, b);
  const GradReport lv = grad_lv(m, *target, b);
  EquivalenceResult r;
  r.kind = kind;
  r.reports_equal = ld == lv;
  r.alpha_equal = ld.alpha == lv.alpha;
  for (const auto& [name, g] : ld.alpha) r.alpha_entries += g.size();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---- enumeration on the two-point chain ----

inline std::vector<CheckResult> enumeration_checks(std::uint64_t seed = 3, double tol = 1e-10) {
  std::vector<CheckResult> out;
  const lab::TwoPointChain chain = lab::TwoPointChain::random(seed);
  const std::vector<lab::PathTerm> paths = lab::enumerate(chain);
  struct Est {
    std::string name;
    PathCoefficients (*coef)(std::span<const double>, std::span<const double>);
    lab::Objective objective;
  };
  for (const Est& e : {Est{"rkl_ld", rkl_ld_coefficients, lab::Objective::reverse_kl},
                       Est{"lv", lv_coefficients, lab::Objective::log_variance},
                       Est{"fkl_nis", fkl_nis_coefficients, lab::Objective::forward_kl}}) {
    lab::ChainGradient est = lab::estimator_mean(paths, e.coef);
    if (e.objective == lab::Objective::forward_kl) {
      std::fill(est.alpha.begin(), est.alpha.end(), 0.0);
      std::fill(est.nu.begin(), est.nu.end(), 0.0);
    }
    const lab::ChainGradient exact = lab::analytic_gradient(chain, e.objective);
    out.push_back({"enumeration/" + e.name, est.max_abs_diff(exact), tol});
    const lab::ChainGradient fd = lab::finite_difference_gradient(chain, e.objective);
    out.push_back({"enumeration/" + e.name + "/analytic_vs_fd", exact.max_abs_diff(fd) / std::max(1.0, exact.max_abs()), 1e-7});
  }
  return out;
}

}  // namespace dbridge::check
