#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dbridge/targets/target.hpp"

namespace dbridge {

// Posterior over (log a_inn, log a_obs, x_1..x_n) of a Gaussian random walk observed with noise:
// log a ~ N(0, 2^2), x_1 ~ N(0, a_inn^2), x_i ~ N(x_{i-1}, a_inn^2), y_i ~ N(x_i, a_obs^2).
// The a's are standard deviations. Observations are generated from the model under a fixed seed.
class BrownianTarget final : public TargetDensity {
 public:
  static constexpr std::size_t kSteps = 30;

  explicit BrownianTarget(std::uint64_t seed = 0) : seed_(seed) {
    rng::Stream s(seed, 0, rng::Purpose::data);
    const double a_inn = std::exp(2.0 * s.normal());
    const double a_obs = std::exp(2.0 * s.normal());
    y_.resize(kSteps);
    observed_.assign(kSteps, 1);
    double x = 0.0;
    for (std::size_t i = 0; i < kSteps; ++i) {
      x += a_inn * s.normal();
      y_[i] = x + a_obs * s.normal();
    }
    // y_11 .. y_19 (1-based) are withheld.
    for (std::size_t i = 10; i < 19; ++i) observed_[i] = 0;
    finish();
  }

  BrownianTarget(std::vector<double> y, std::vector<char> observed) : y_(std::move(y)), observed_(std::move(observed)) {
    if (y_.empty() || y_.size() != observed_.size()) throw ConfigError("brownian: y/mask size mismatch");
    custom_ = true;
    finish();
  }

  std::string name() const override {
    return custom_ ? "brownian:custom" : "brownian:seed=" + std::to_string(seed_);
  }
  std::size_t dim() const override { return y_.size() + 2; }
  const std::vector<double>& observations() const { return y_; }
  const std::vector<char>& observed() const { return observed_; }

  std::vector<double> energy(const Array& x) const override {
    check_input(x);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* r = &x(i, 0);
      const Sums s = sums(r);
      const double zi = r[0], zo = r[1];
      double lp = -zi * zi / 8.0 - zo * zo / 8.0 - 2.0 * (0.5 * kLog2Pi + std::log(2.0));
      lp += -0.5 * s.d * std::exp(-2.0 * zi) - n_ * (zi + 0.5 * kLog2Pi);
      lp += -0.5 * s.r * std::exp(-2.0 * zo) - n_obs_ * (zo + 0.5 * kLog2Pi);
      out[i] = -lp;
    }
    return out;
  }

  Array score(const Array& x) const override {
    check_input(x);
    Array g(x.shape());
    const std::size_t n = y_.size();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* r = &x(i, 0);
      const double* xs = r + 2;
      const Sums s = sums(r);
      const double ei = std::exp(-2.0 * r[0]), eo = std::exp(-2.0 * r[1]);
      g(i, 0) = -r[0] / 4.0 + s.d * ei - n_;
      g(i, 1) = -r[1] / 4.0 + s.r * eo - n_obs_;
      for (std::size_t k = 0; k < n; ++k) {
        const double back = xs[k] - (k ? xs[k - 1] : 0.0);
        const double fwd = k + 1 < n ? xs[k + 1] - xs[k] : 0.0;
        g(i, 2 + k) = -ei * (back - fwd) + (observed_[k] ? eo * (y_[k] - xs[k]) : 0.0);
      }
    }
    return g;
  }

  Array score_hvp(const Array& x, const Array& v) const override {
    check_input(x);
    Array h(x.shape());
    const std::size_t n = y_.size();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* r = &x(i, 0);
      const double* xs = r + 2;
      const double* vi = &v(i, 0);
      const double* vx = vi + 2;
      const Sums s = sums(r);
      const double ei = std::exp(-2.0 * r[0]), eo = std::exp(-2.0 * r[1]);
      double hi = (-0.25 - 2.0 * s.d * ei) * vi[0];
      double ho = (-0.25 - 2.0 * s.r * eo) * vi[1];
      for (std::size_t k = 0; k < n; ++k) {
        const double back = xs[k] - (k ? xs[k - 1] : 0.0);
        const double fwd = k + 1 < n ? xs[k + 1] - xs[k] : 0.0;
        const double dd = 2.0 * (back - fwd);                           // dD/dx_k
        const double dr = observed_[k] ? -2.0 * (y_[k] - xs[k]) : 0.0;  // dR/dx_k
        hi += ei * dd * vx[k];
        ho += eo * dr * vx[k];
        // x-x block: -e_inn * L v - e_obs * mask * v, with L the random-walk precision pattern
        double lv = (k + 1 < n ? 2.0 : 1.0) * vx[k];
        if (k) lv -= vx[k - 1];
        if (k + 1 < n) lv -= vx[k + 1];
        h(i, 2 + k) = ei * dd * vi[0] + eo * dr * vi[1] - ei * lv - (observed_[k] ? eo * vx[k] : 0.0);
      }
      h(i, 0) = hi;
      h(i, 1) = ho;
    }
    return h;
  }

 private:
  struct Sums {
    double d;  // sum of squared increments, x_0 = 0
    double r;  // sum of squared residuals over observed steps
  };

  Sums sums(const double* r) const {
    const double* xs = r + 2;
    Sums s{0.0, 0.0};
    for (std::size_t k = 0; k < y_.size(); ++k) {
      const double inc = xs[k] - (k ? xs[k - 1] : 0.0);
      s.d += inc * inc;
      if (observed_[k]) s.r += (y_[k] - xs[k]) * (y_[k] - xs[k]);
    }
    return s;
  }

  void finish() {
    n_ = static_cast<double>(y_.size());
    n_obs_ = 0.0;
    for (char o : observed_) n_obs_ += o ? 1.0 : 0.0;
  }

  std::uint64_t seed_ = 0;
  bool custom_ = false;
  std::vector<double> y_;
  std::vector<char> observed_;
  double n_ = 0.0, n_obs_ = 0.0;
};

}  // namespace dbridge
