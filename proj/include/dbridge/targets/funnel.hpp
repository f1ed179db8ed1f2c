#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "dbridge/targets/target.hpp"

namespace dbridge {

// x1 ~ N(0, 9), x_j | x1 ~ N(0, exp(x1)) for j >= 2. Normalized.
class FunnelTarget final : public TargetDensity {
 public:
  explicit FunnelTarget(std::size_t d = 10) : d_(d) {
    if (d < 2) throw ConfigError("funnel needs d >= 2");
  }

  std::string name() const override { return "funnel:d=" + std::to_string(d_); }
  std::size_t dim() const override { return d_; }

  std::vector<double> energy(const Array& x) const override {
    check_input(x);
    std::vector<double> out(x.rows());
    const double rest = static_cast<double>(d_ - 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double x1 = x(i, 0);
      double ss = 0.0;
      for (std::size_t j = 1; j < d_; ++j) ss += x(i, j) * x(i, j);
      out[i] = x1 * x1 / 18.0 + 0.5 * (kLog2Pi + std::log(9.0)) + 0.5 * ss * std::exp(-x1) +
               0.5 * rest * (x1 + kLog2Pi);
    }
    return out;
  }

  Array score(const Array& x) const override {
    check_input(x);
    Array g(x.shape());
    const double rest = static_cast<double>(d_ - 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double x1 = x(i, 0), e = std::exp(-x1);
      double ss = 0.0;
      for (std::size_t j = 1; j < d_; ++j) {
        ss += x(i, j) * x(i, j);
        g(i, j) = -x(i, j) * e;
      }
      g(i, 0) = -x1 / 9.0 + 0.5 * ss * e - 0.5 * rest;
    }
    return g;
  }

  Array score_hvp(const Array& x, const Array& v) const override {
    check_input(x);
    Array h(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double x1 = x(i, 0), e = std::exp(-x1);
      double ss = 0.0, cross = 0.0;
      for (std::size_t j = 1; j < d_; ++j) {
        ss += x(i, j) * x(i, j);
        cross += x(i, j) * e * v(i, j);
        h(i, j) = x(i, j) * e * v(i, 0) - e * v(i, j);
      }
      h(i, 0) = (-1.0 / 9.0 - 0.5 * ss * e) * v(i, 0) + cross;
    }
    return h;
  }

  std::optional<double> log_z() const override { return 0.0; }
  bool has_sampler() const override { return true; }

  // Ground-truth samples are clipped to [-30, 30]; the density itself is not.
  Array sample(std::size_t n, std::uint64_t seed) const override {
    Array x(Shape{n, d_});
    for (std::size_t i = 0; i < n; ++i) {
      rng::Stream s(seed, i);
      const double x1 = 3.0 * s.normal();
      const double sd = std::exp(0.5 * x1);
      x(i, 0) = std::clamp(x1, -30.0, 30.0);
      for (std::size_t j = 1; j < d_; ++j) x(i, j) = std::clamp(sd * s.normal(), -30.0, 30.0);
    }
    return x;
  }

 private:
  std::size_t d_;
};

}  // namespace dbridge
