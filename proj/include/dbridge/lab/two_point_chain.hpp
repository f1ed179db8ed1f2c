#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "dbridge/autodiff/ops.hpp"
#include "dbridge/core/random.hpp"
#include "dbridge/losses.hpp"

namespace dbridge::lab {

// Binary-state bridge with T steps, small enough to enumerate all 2^(T+1) paths.
//   reverse  q_t(x_{t-1} = 1 | x_t = s)     = sigmoid(alpha[t-1][s] + nu[t-1][s])
//   forward  p_t(x_t = 1 | x_{t-1} = s)     = sigmoid(phi[t-1][s] - nu[t-1][s])
//   prior    pi_T(x_T = 1)                  = sigmoid(nu[2T])
//   target   rho(x_0) = target_weights[x_0] (unnormalized)
// alpha and phi hold 2T entries indexed [2(t-1) + s]; nu holds 2T + 1.
struct TwoPointChain {
  std::size_t steps = 3;
  std::vector<double> alpha, phi, nu;
  std::array<double, 2> target_weights{0.7, 1.9};

  std::size_t path_count() const { return std::size_t{1} << (steps + 1); }

  static TwoPointChain random(std::uint64_t seed, std::size_t steps = 3) {
    TwoPointChain c;
    c.steps = steps;
    rng::Stream s(seed, 0, rng::Purpose::data);
    c.alpha.resize(2 * steps);
    c.phi.resize(2 * steps);
    c.nu.resize(2 * steps + 1);
    for (auto* v : {&c.alpha, &c.phi, &c.nu})
      for (auto& e : *v) e = s.uniform(-1.5, 1.5);
    c.target_weights = {s.uniform(0.2, 2.0), s.uniform(0.2, 2.0)};
    return c;
  }
};

// Gradient in the chain's (alpha, phi, nu) coordinates.
struct ChainGradient {
  std::vector<double> alpha, phi, nu;

  double max_abs_diff(const ChainGradient& o) const {
    double m = 0.0;
    auto upd = [&](const std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    };
    upd(alpha, o.alpha);
    upd(phi, o.phi);
    upd(nu, o.nu);
    return m;
  }
  double max_abs() const {
    double m = 0.0;
    for (auto* v : {&alpha, &phi, &nu})
      for (double e : *v) m = std::max(m, std::abs(e));
    return m;
  }
};

// Path x_0..x_T encoded as bits: bit t of `code` is x_t.
inline int state_of(std::size_t code, std::size_t t) { return static_cast<int>((code >> t) & 1u); }

struct ChainVars {
  ad::Var alpha, phi, nu;
};

// log q(path) and log rho(x_0) + log p(path | x_0) as tape nodes.
struct PathLogs {
  ad::Var log_q, log_p;
};

namespace detail {

inline ad::Var log_bernoulli(ad::Var logit, int x) {
  return x ? ad::log(ad::sigmoid(logit)) : ad::log(ad::sigmoid(ad::neg(logit)));
}

}  // namespace detail

inline PathLogs path_logs(const TwoPointChain& c, const ChainVars& v, std::size_t code) {
  using namespace ad;
  Tape& tape = *v.alpha.tape();
  const std::size_t T = c.steps;
  Var lq = detail::log_bernoulli(slice(v.nu, 2 * T, 2 * T + 1), state_of(code, T));
  for (std::size_t t = T; t >= 1; --t) {
    const std::size_t k = 2 * (t - 1) + static_cast<std::size_t>(state_of(code, t));
    lq = add(lq, detail::log_bernoulli(add(slice(v.alpha, k, k + 1), slice(v.nu, k, k + 1)), state_of(code, t - 1)));
  }
  Var lp = tape.constant(Array::vector({std::log(c.target_weights[state_of(code, 0)])}));
  for (std::size_t t = 1; t <= T; ++t) {
    const std::size_t k = 2 * (t - 1) + static_cast<std::size_t>(state_of(code, t - 1));
    lp = add(lp, detail::log_bernoulli(sub(slice(v.phi, k, k + 1), slice(v.nu, k, k + 1)), state_of(code, t)));
  }
  return {lq, lp};
}

inline ChainVars bind(ad::Tape& tape, const TwoPointChain& c, bool track = true) {
  return {tape.leaf(Array::vector(c.alpha), track), tape.leaf(Array::vector(c.phi), track),
          tape.leaf(Array::vector(c.nu), track)};
}

inline ChainGradient read_gradient(const ChainVars& v) {
  return {v.alpha.grad().values(), v.phi.grad().values(), v.nu.grad().values()};
}

// One enumerated path: probability under q, log-ratio, and per-path score gradients.
struct PathTerm {
  double q = 0.0;
  double log_ratio = 0.0;
  ChainGradient grad_log_q, grad_log_p;
};

inline std::vector<PathTerm> enumerate(const TwoPointChain& c) {
  std::vector<PathTerm> out;
  for (std::size_t code = 0; code < c.path_count(); ++code) {
    PathTerm term;
    {
      ad::Tape tape;
      ChainVars v = bind(tape, c);
      PathLogs l = path_logs(c, v, code);
      term.q = std::exp(l.log_q.value()[0]);
      term.log_ratio = l.log_q.value()[0] - l.log_p.value()[0];
      tape.backward(ad::sum(l.log_q));
      term.grad_log_q = read_gradient(v);
    }
    {
      ad::Tape tape;
      ChainVars v = bind(tape, c);
      PathLogs l = path_logs(c, v, code);
      tape.backward(ad::sum(l.log_p));
      term.grad_log_p = read_gradient(v);
    }
    out.push_back(std::move(term));
  }
  return out;
}

// Exact expectation of an estimator over all paths, using path probabilities as weights.
inline ChainGradient estimator_mean(const std::vector<PathTerm>& paths,
                                    PathCoefficients (*coefficients)(std::span<const double>, std::span<const double>)) {
  std::vector<double> l, w;
  for (auto& p : paths) {
    l.push_back(p.log_ratio);
    w.push_back(p.q);
  }
  const PathCoefficients c = coefficients(l, w);
  ChainGradient g{std::vector<double>(paths[0].grad_log_q.alpha.size()),
                  std::vector<double>(paths[0].grad_log_q.phi.size()),
                  std::vector<double>(paths[0].grad_log_q.nu.size())};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    auto acc = [&](std::vector<double>& dst, const std::vector<double>& gq, const std::vector<double>& gp) {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += c.on_log_q[i] * gq[k] + c.on_log_p[i] * gp[k];
    };
    acc(g.alpha, paths[i].grad_log_q.alpha, paths[i].grad_log_p.alpha);
    acc(g.phi, paths[i].grad_log_q.phi, paths[i].grad_log_p.phi);
    acc(g.nu, paths[i].grad_log_q.nu, paths[i].grad_log_p.nu);
  }
  return g;
}

// ---- exact objectives, differentiated as whole expressions ----

// sum_paths q log(q / rho p): reverse KL up to log Z.
inline ad::Var reverse_kl(const TwoPointChain& c, const ChainVars& v) {
  using namespace ad;
  Var total;
  for (std::size_t code = 0; code < c.path_count(); ++code) {
    PathLogs l = path_logs(c, v, code);
    Var term = mul(exp(l.log_q), sub(l.log_q, l.log_p));
    total = total.valid() ? add(total, term) : term;
  }
  return sum(total);
}

// 1/2 sum_paths qbar (l - sum qbar l)^2 with qbar frozen at the chain's current parameters.
inline ad::Var log_variance(const TwoPointChain& c, const ChainVars& v, const std::vector<double>& qbar) {
  using namespace ad;
  Tape& tape = *v.alpha.tape();
  std::vector<Var> ls;
  Var mean;
  for (std::size_t code = 0; code < c.path_count(); ++code) {
    PathLogs l = path_logs(c, v, code);
    Var lr = sub(l.log_q, l.log_p);
    ls.push_back(lr);
    Var term = mul(tape.constant(Array::vector({qbar[code]})), lr);
    mean = mean.valid() ? add(mean, term) : term;
  }
  Var total;
  for (std::size_t code = 0; code < c.path_count(); ++code) {
    Var term = mul(tape.constant(Array::vector({0.5 * qbar[code]})), square(sub(ls[code], mean)));
    total = total.valid() ? add(total, term) : term;
  }
  return sum(total);
}

// KL(p || q) with p = rho p / Z normalized over paths.
inline ad::Var forward_kl(const TwoPointChain& c, const ChainVars& v) {
  using namespace ad;
  Tape& tape = *v.alpha.tape();
  const double z = c.target_weights[0] + c.target_weights[1];
  Var total;
  for (std::size_t code = 0; code < c.path_count(); ++code) {
    PathLogs l = path_logs(c, v, code);
    Var lp = shift(l.log_p, -std::log(z));
    Var term = mul(exp(lp), sub(lp, l.log_q));
    total = total.valid() ? add(total, term) : term;
  }
  (void)tape;
  return sum(total);
}

inline std::vector<double> path_probabilities(const TwoPointChain& c) {
  std::vector<double> q;
  for (auto& p : enumerate(c)) q.push_back(p.q);
  return q;
}

enum class Objective { reverse_kl, log_variance, forward_kl };

inline double objective_value(const TwoPointChain& c, Objective o, const std::vector<double>& qbar) {
  ad::Tape tape;
  ChainVars v = bind(tape, c, false);
  switch (o) {
    case Objective::reverse_kl: return reverse_kl(c, v).value().item();
    case Objective::log_variance: return log_variance(c, v, qbar).value().item();
    case Objective::forward_kl: return forward_kl(c, v).value().item();
  }
  return 0.0;
}

// Reverse-mode gradient of the exact objective.
inline ChainGradient analytic_gradient(const TwoPointChain& c, Objective o) {
  const std::vector<double> qbar = path_probabilities(c);
  ad::Tape tape;
  ChainVars v = bind(tape, c);
  ad::Var root = o == Objective::reverse_kl     ? reverse_kl(c, v)
                 : o == Objective::log_variance ? log_variance(c, v, qbar)
                                                : forward_kl(c, v);
  tape.backward(root);
  ChainGradient g = read_gradient(v);
  if (o == Objective::forward_kl) {
    // The importance-weighted estimator targets the forward-process parameters only.
    std::fill(g.alpha.begin(), g.alpha.end(), 0.0);
    std::fill(g.nu.begin(), g.nu.end(), 0.0);
  }
  return g;
}

// Central differences of the exact objective (qbar frozen for the log-variance objective).
inline ChainGradient finite_difference_gradient(const TwoPointChain& c, Objective o, double h = 1e-6) {
  const std::vector<double> qbar = path_probabilities(c);
  ChainGradient g{std::vector<double>(c.alpha.size()), std::vector<double>(c.phi.size()),
                  std::vector<double>(c.nu.size())};
  auto run = [&](std::vector<double> TwoPointChain::*member, std::vector<double>& out) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      TwoPointChain up = c, dn = c;
      (up.*member)[k] += h;
      (dn.*member)[k] -= h;
      out[k] = (objective_value(up, o, qbar) - objective_value(dn, o, qbar)) / (2.0 * h);
    }
  };
  run(&TwoPointChain::alpha, g.alpha);
  run(&TwoPointChain::phi, g.phi);
  run(&TwoPointChain::nu, g.nu);
  if (o == Objective::forward_kl) {
    std::fill(g.alpha.begin(), g.alpha.end(), 0.0);
    std::fill(g.nu.begin(), g.nu.end(), 0.0);
  }
  return g;
}

}  // namespace dbridge::lab
