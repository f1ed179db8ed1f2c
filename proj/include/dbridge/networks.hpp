#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dbridge/autodiff/ops.hpp"
#include "dbridge/core/random.hpp"
#include "dbridge/params.hpp"
#include "dbridge/targets/target.hpp"

namespace dbridge {

inline constexpr double kScoreClip = 1e4;
inline constexpr double kLangevinClip = 1e2;
inline constexpr std::size_t kDefaultEmbed = 64;
inline constexpr std::size_t kDefaultHidden = 64;

// [sin(w_k s), cos(w_k s)] for dim/2 frequencies w_k evenly spaced in [0.1, 100]; s = t/T.
inline Array time_embedding(double s, std::size_t dim = kDefaultEmbed) {
  if (dim < 2 || dim % 2) throw ConfigError("time embedding size must be even and >= 2");
  const std::size_t half = dim / 2;
  Array e(Shape{dim});
  for (std::size_t k = 0; k < half; ++k) {
    const double w = half == 1 ? 0.1 : 0.1 + (100.0 - 0.1) * static_cast<double>(k) / static_cast<double>(half - 1);
    e[k] = std::sin(w * s);
    e[half + k] = std::cos(w * s);
  }
  return e;
}

inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

struct MlpIndex {
  std::vector<std::size_t> weights, biases;
};

// Layers sizes[0] -> sizes[1] -> ... ; hidden weights ~ N(0, 1/fan_in), biases 0, last layer all zero.
inline MlpIndex add_mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& sizes, Block block,
                        bool learnable, std::uint64_t seed) {
  MlpIndex idx;
  const std::size_t layers = sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    Array w(Shape{sizes[l], sizes[l + 1]});
    if (l + 1 < layers) {
      rng::Stream s(seed, name_hash(base), rng::Purpose::init);
      const double sd = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      for (auto& v : w.values()) v = sd * s.normal();
    }
    idx.weights.push_back(store.add(base + ".weight", std::move(w), block, learnable, LrGroup::model));
    idx.biases.push_back(store.add(base + ".bias", Array(Shape{sizes[l + 1]}), block, learnable, LrGroup::model));
  }
  return idx;
}

struct ScoreNetIndex {
  MlpIndex trunk, head;
  std::size_t dim = 0, embed = kDefaultEmbed;
};

// Trunk s~(x, t) on concat(x, emb(t/T)) and head s^(t) on emb(t/T); both 2 hidden layers with SiLU.
inline ScoreNetIndex add_score_net(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden,
                                   std::size_t embed, Block block, bool learnable, std::uint64_t seed) {
  ScoreNetIndex net;
  net.dim = dim;
  net.embed = embed;
  net.trunk = add_mlp(store, prefix + ".trunk", {dim + embed, hidden, hidden, dim}, block, learnable, seed);
  net.head = add_mlp(store, prefix + ".head", {embed, hidden, hidden, dim}, block, learnable, seed);
  return net;
}

struct ScoreNetVars {
  std::vector<ad::Var> tw, tb, hw, hb;
  std::size_t dim = 0, embed = kDefaultEmbed;
};

inline ScoreNetVars bind_score_net(const BoundParams& p, const ScoreNetIndex& idx) {
  ScoreNetVars v;
  v.dim = idx.dim;
  v.embed = idx.embed;
  for (auto i : idx.trunk.weights) v.tw.push_back(p[i]);
  for (auto i : idx.trunk.biases) v.tb.push_back(p[i]);
  for (auto i : idx.head.weights) v.hw.push_back(p[i]);
  for (auto i : idx.head.biases) v.hb.push_back(p[i]);
  return v;
}

// clip(s~(x,t) + s^(t) * clip(langevin, -1e2, 1e2), -1e4, 1e4); x and langevin are (B x N).
inline ad::Var score_forward(const ScoreNetVars& net, ad::Var x, double time_frac, ad::Var langevin) {
  using namespace ad;
  Tape& t = *x.tape();
  Var emb = t.constant(time_embedding(time_frac, net.embed));
  // First trunk layer acts on concat(x, emb); its weight rows split into the state and time parts.
  Var w_state = slice(net.tw[0], 0, net.dim);
  Var w_time = slice(net.tw[0], net.dim, net.dim + net.embed);
  Var h = silu(add_row(matmul(x, w_state), add(matmul(emb, w_time), net.tb[0])));
  for (std::size_t l = 1; l + 1 < net.tw.size(); ++l) h = silu(add_row(matmul(h, net.tw[l]), net.tb[l]));
  Var trunk = add_row(matmul(h, net.tw.back()), net.tb.back());

  Var e = emb;
  for (std::size_t l = 0; l + 1 < net.hw.size(); ++l) e = silu(add(matmul(e, net.hw[l]), net.hb[l]));
  Var head = add(matmul(e, net.hw.back()), net.hb.back());

  return clip(add(trunk, mul_row(clip(langevin, -kLangevinClip, kLangevinClip), head)), -kScoreClip, kScoreClip);
}

// Value-only evaluation for callers that hold plain arrays.
inline Array score_forward(const ParamStore& store, const ScoreNetIndex& idx, const Array& x, double time_frac,
                           const Array& langevin) {
  ad::Tape tape;
  BoundParams p(tape, store, false);
  return score_forward(bind_score_net(p, idx), tape.constant(x), time_frac, tape.constant(langevin)).value();
}

// ---- learnable diagonal Gaussian prior N(mean, diag(exp(log_std))^2) ----

inline ad::Var prior_log_density(ad::Var x, ad::Var mean, ad::Var log_std) {
  using namespace ad;
  const double n = static_cast<double>(mean.value().size());
  Var z = mul_row(add_row(x, neg(mean)), exp(neg(log_std)));
  return sub(shift(scale(row_sum(square(z)), -0.5), -0.5 * n * kLog2Pi), sum(log_std));
}

inline ad::Var prior_score(ad::Var x, ad::Var mean, ad::Var log_std) {
  using namespace ad;
  return mul_row(add_row(x, neg(mean)), neg(exp(scale(log_std, -2.0))));
}

inline double prior_entropy(const Array& log_std) {
  double h = 0.0;
  for (double l : log_std.values()) h += 0.5 * (kLog2Pi + 1.0) + l;
  return h;
}

// ---- interpolation schedule: beta = softplus(raw) / sum softplus(raw) ----

// eta(t) = sum_{s >= t} beta(s) for t = 0..T, evaluated as suffix(t) / suffix(0) so that
// eta(0) = 1 and eta(T) = 0 hold exactly and eta is non-increasing in t.
inline ad::Var schedule_eta(ad::Var softplus_raw, ad::Var total, std::size_t t) {
  const std::size_t T = softplus_raw.value().size();
  return ad::div(ad::sum(ad::slice(softplus_raw, t, T)), total);
}

inline std::vector<double> schedule_betas(const Array& raw) {
  ad::Tape tape;
  ad::Var sp = ad::softplus(tape.constant(raw));
  ad::Var beta = ad::div(sp, ad::sum(sp));
  return beta.value().values();
}

inline std::vector<double> schedule_etas(const Array& raw) {
  ad::Tape tape;
  ad::Var sp = ad::softplus(tape.constant(raw));
  ad::Var total = ad::sum(sp);
  std::vector<double> eta;
  for (std::size_t t = 0; t <= raw.size(); ++t) eta.push_back(schedule_eta(sp, total, t).value().item());
  return eta;
}

// ---- annealed density pi_t = pi_0^eta * pi_T^(1 - eta) ----

struct AnnealedEval {
  std::vector<double> log_density;
  Array score;
};

inline AnnealedEval anneal_logdensity(const TargetDensity& target, const Array& prior_mean, const Array& prior_log_std,
                                      double eta, const Array& x) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  ad::Tape tape;
  ad::Var xv = tape.constant(x), mu = tape.constant(prior_mean), ls = tape.constant(prior_log_std);
  const std::vector<double> lp = prior_log_density(xv, mu, ls).value().values();
  const Array sp = prior_score(xv, mu, ls).value();
  AnnealedEval out;
  out.score = Array(x.shape());
  out.log_density.resize(x.rows());
  if (eta == 0.0) {
    out.log_density = lp;
    out.score = sp;
    return out;
  }
  const std::vector<double> lt = target.log_density(x);
  const Array st = target.score(x);
  if (eta == 1.0) {
    out.log_density = lt;
    out.score = st;
    return out;
  }
  for (std::size_t i = 0; i < x.rows(); ++i) out.log_density[i] = eta * lt[i] + (1.0 - eta) * lp[i];
  for (std::size_t k = 0; k < x.size(); ++k) out.score[k] = eta * st[k] + (1.0 - eta) * sp[k];
  return out;
}

}  // namespace dbridge
