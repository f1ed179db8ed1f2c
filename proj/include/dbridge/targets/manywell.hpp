#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "dbridge/targets/target.hpp"

namespace dbridge {

// rho(x) = exp(-sum_{i<m} (x_i^2 - delta)^2 - 1/2 sum_{i>=m} x_i^2); factorizes over dimensions.
class ManyWellTarget final : public TargetDensity {
 public:
  ManyWellTarget(std::size_t d = 5, std::size_t m = 5, double delta = 4.0) : d_(d), m_(m), delta_(delta) {
    if (d < 1 || m > d) throw ConfigError("manywell needs 1 <= d and m <= d");
    if (delta < 0) throw ConfigError("manywell needs delta >= 0");
    well_log_z_ = integrate_well();
    log_z_ = static_cast<double>(m_) * well_log_z_ + 0.5 * static_cast<double>(d_ - m_) * kLog2Pi;
    setup_sampler();
  }

  std::string name() const override {
    char buf[96];
    std::snprintf(buf, sizeof buf, "manywell:d=%zu,m=%zu,delta=%.17g", d_, m_, delta_);
    return buf;
  }
  std::size_t dim() const override { return d_; }
  double delta() const { return delta_; }
  std::size_t wells() const { return m_; }
  // log of the integral of exp(-(x^2 - delta)^2) over R.
  double well_log_z() const { return well_log_z_; }

  std::vector<double> energy(const Array& x) const override {
    check_input(x);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < d_; ++j) {
        const double v = x(i, j);
        if (j < m_) {
          const double w = v * v - delta_;
          e += w * w;
        } else {
          e += 0.5 * v * v;
        }
      }
      out[i] = e;
    }
    return out;
  }

  Array score(const Array& x) const override {
    check_input(x);
    Array g(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d_; ++j) {
        const double v = x(i, j);
        g(i, j) = j < m_ ? -4.0 * v * (v * v - delta_) : -v;
      }
    return g;
  }

  Array score_hvp(const Array& x, const Array& v) const override {
    check_input(x);
    Array h(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d_; ++j) {
        const double u = x(i, j);
        h(i, j) = (j < m_ ? -(12.0 * u * u - 4.0 * delta_) : -1.0) * v(i, j);
      }
    return h;
  }

  std::optional<double> log_z() const override { return log_z_; }
  bool has_sampler() const override { return true; }

  Array sample(std::size_t n, std::uint64_t seed) const override {
    Array x(Shape{n, d_});
    for (std::size_t i = 0; i < n; ++i) {
      rng::Stream s(seed, i);
      for (std::size_t j = 0; j < d_; ++j) x(i, j) = j < m_ ? sample_well(s) : s.normal();
    }
    return x;
  }

  // One mode per sign pattern of the double-well coordinates.
  std::size_t mode_count() const override { return std::size_t{1} << m_; }
  std::vector<std::size_t> assign_modes(const Array& x) const override {
    check_input(x);
    std::vector<std::size_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::size_t k = 0;
      for (std::size_t j = 0; j < m_; ++j)
        if (x(i, j) > 0) k |= std::size_t{1} << j;
      out[i] = k;
    }
    return out;
  }

 private:
  double well(double v) const {
    const double w = v * v - delta_;
    return std::exp(-w * w);
  }

  double integrate_well() const {
    using boost::math::quadrature::gauss_kronrod;
    const double r = std::sqrt(delta_);
    const double lim = r + 6.0;
    double err = 0.0;
    // Split at the wells so each panel holds a single smooth bump.
    auto f = [this](double v) { return well(v); };
    double total = 0.0;
    const double cuts[] = {-lim, -r, 0.0, r, lim};
    for (int k = 0; k < 4; ++k) {
      double e = 0.0;
      total += gauss_kronrod<double, 61>::integrate(f, cuts[k], cuts[k + 1], 20, 1e-15, &e);
      err += e;
    }
    if (!(total > 0) || !std::isfinite(total) || err > 1e-8 * total)
      throw SetupError("manywell: quadrature did not converge (estimate " + std::to_string(total) +
                       ", error " + std::to_string(err) + ")");
    return std::log(total);
  }

  // Proposal: N(+-sqrt(delta), s^2) with weight 0.45 each plus a broad N(0, (sqrt(delta) + 1)^2) with
  // weight 0.1 covering the barrier; bound found on a fine grid with 5% slack.
  void setup_sampler() {
    center_ = std::sqrt(delta_);
    prop_sd_ = delta_ >= 0.5 ? 1.5 / std::sqrt(8.0 * delta_) : 1.0;
    if (delta_ < 0.5) center_ = 0.0;
    double best = 0.0;
    const double lim = center_ + 8.0;
    for (double v = -lim; v <= lim; v += 1e-3) best = std::max(best, well(v) / proposal_density(v));
    bound_ = 1.05 * best;
  }

  double proposal_density(double v) const {
    auto g = [](double z, double sd) { return std::exp(-0.5 * z * z / (sd * sd)) / (sd * std::sqrt(2.0 * std::numbers::pi)); };
    const double broad = center_ + 1.0;
    return 0.45 * (g(v - center_, prop_sd_) + g(v + center_, prop_sd_)) + 0.1 * g(v, broad);
  }

  double sample_well(rng::Stream& s) const {
    for (;;) {
      const double u = s.uniform();
      const double v = u < 0.1 ? (center_ + 1.0) * s.normal() : (u < 0.55 ? -center_ : center_) + prop_sd_ * s.normal();
      if (s.uniform() * bound_ * proposal_density(v) <= well(v)) return v;
    }
  }

  std::size_t d_, m_;
  double delta_;
  double well_log_z_ = 0.0, log_z_ = 0.0;
  double center_ = 0.0, prop_sd_ = 1.0, bound_ = 1.0;
};

}  // namespace dbridge
