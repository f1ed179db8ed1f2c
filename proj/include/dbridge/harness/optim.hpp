#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "dbridge/core/array.hpp"
#include "dbridge/core/error.hpp"
#include "dbridge/params.hpp"

namespace dbridge {

// Cosine decay from lr_start at step 0 to lr_start / 10 at step == total.
inline double cosine_lr(std::size_t step, std::size_t total, double lr_start) {
  if (total == 0) return lr_start;
  if (step > total) throw UsageError("learning-rate step beyond the schedule");
  const double end = lr_start / 10.0;
  const double c = std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total));
  return end + (lr_start - end) * 0.5 * (1.0 + c);
}

// Global L2 norm over all gradient arrays.
inline double global_norm(const std::vector<Array>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

struct RAdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct RAdamState {
  std::vector<Array> m, v;
  std::size_t step = 0;     // applied updates
  std::size_t skipped = 0;  // updates skipped for non-finite gradients
};

struct StepInfo {
  bool applied = false;
  double grad_norm = 0.0;  // before clipping
};

struct LearningRates {
  double model = 1e-3, sde = 1e-3, interp = 1e-3;
  double of(LrGroup g) const { return g == LrGroup::model ? model : g == LrGroup::sde ? sde : interp; }
};

// Rectified Adam (the variance-rectified update, without weight decay), applied after clipping the
// gradient to global norm clip_norm. Frozen parameters are never touched.
class RAdam {
 public:
  explicit RAdam(const ParamStore& store, RAdamOptions opt = {}) : opt_(opt) {
    for (const auto& p : store.all()) {
      state_.m.emplace_back(p.value.shape(), 0.0);
      state_.v.emplace_back(p.value.shape(), 0.0);
    }
  }

  const RAdamState& state() const { return state_; }
  RAdamState& state() { return state_; }
  const RAdamOptions& options() const { return opt_; }

  StepInfo step(ParamStore& store, std::vector<Array> grads, const LearningRates& lr) {
    if (grads.size() != store.size()) throw ConfigError("gradient list does not match the parameter store");
    for (std::size_t k = 0; k < grads.size(); ++k)
      if (!grads[k].same_shape(store[k].value)) throw ConfigError("gradient shape mismatch for " + store[k].name);
    for (std::size_t k = 0; k < grads.size(); ++k)
      if (!store[k].learnable) grads[k] = Array(grads[k].shape(), 0.0);

    StepInfo info;
    info.grad_norm = global_norm(grads);
    if (!std::isfinite(info.grad_norm)) {
      ++state_.skipped;
      return info;
    }
    if (opt_.clip_norm > 0 && info.grad_norm > opt_.clip_norm) {
      const double s = opt_.clip_norm / info.grad_norm;
      for (auto& g : grads)
        for (auto& v : g.values()) v *= s;
    }

    const std::size_t t = ++state_.step;
    const double b1 = opt_.beta1, b2 = opt_.beta2;
    const double b1t = std::pow(b1, static_cast<double>(t)), b2t = std::pow(b2, static_cast<double>(t));
    const double bias1 = 1.0 - b1t;
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
    const bool rectify = rho > 5.0;
    const double r = rectify ? std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                             : 0.0;
    const double bias2_sqrt = std::sqrt(1.0 - b2t);

    for (std::size_t k = 0; k < grads.size(); ++k) {
      Parameter& p = store[k];
      if (!p.learnable) continue;
      const double rate = lr.of(p.group);
      auto& m = state_.m[k].values();
      auto& v = state_.v[k].values();
      auto& x = p.value.values();
      const auto& g = grads[k].values();
      for (std::size_t e = 0; e < x.size(); ++e) {
        m[e] = b1 * m[e] + (1.0 - b1) * g[e];
        v[e] = b2 * v[e] + (1.0 - b2) * g[e] * g[e];
        const double mhat = m[e] / bias1;
        if (rectify) {
          const double adaptive = bias2_sqrt / (std::sqrt(v[e]) + opt_.eps);
          x[e] -= rate * mhat * r * adaptive;
        } else {
          x[e] -= rate * mhat;
        }
      }
    }
    info.applied = true;
    return info;
  }

 private:
  RAdamOptions opt_;
  RAdamState state_;
};

}  // namespace dbridge
