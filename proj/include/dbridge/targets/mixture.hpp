#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "dbridge/targets/target.hpp"

namespace dbridge {

enum class ComponentFamily { gaussian, student_t2 };

struct MixtureSpec {
  std::size_t d = 2;
  std::size_t m = 1;
  double halfwidth = 0.0;
  std::uint64_t seed = 0;
  ComponentFamily family = ComponentFamily::gaussian;
};

// Equal-weight mixture of unit Gaussians or products of 1-d Student-t(2) variables.
class MixtureTarget final : public TargetDensity {
 public:
  explicit MixtureTarget(const MixtureSpec& spec) : spec_(spec) {
    if (spec.d < 1 || spec.m < 1) throw ConfigError("mixture needs d >= 1 and m >= 1");
    rng::Stream s(spec.seed, 0, rng::Purpose::data);
    locations_.resize(spec.m * spec.d);
    for (auto& v : locations_) v = s.uniform(-spec.halfwidth, spec.halfwidth);
    init();
  }

  MixtureTarget(ComponentFamily family, std::size_t d, std::vector<double> locations) {
    if (d < 1 || locations.empty() || locations.size() % d) throw ConfigError("mixture: bad location list");
    spec_.d = d;
    spec_.m = locations.size() / d;
    spec_.family = family;
    locations_ = std::move(locations);
    explicit_locations_ = true;
    init();
  }

  std::string name() const override {
    std::string base = spec_.family == ComponentFamily::gaussian ? "gmm" : "mos";
    if (explicit_locations_) return base + ":custom";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s:d=%zu,m=%zu,halfwidth=%.17g,seed=%llu", base.c_str(), spec_.d, spec_.m,
                  spec_.halfwidth, static_cast<unsigned long long>(spec_.seed));
    return buf;
  }
  std::size_t dim() const override { return spec_.d; }
  const MixtureSpec& spec() const { return spec_; }
  const std::vector<double>& locations() const { return locations_; }

  std::vector<double> energy(const Array& x) const override {
    check_input(x);
    std::vector<double> out(x.rows()), lc(spec_.m);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      component_logs(&x(i, 0), lc);
      out[i] = -(logsumexp(lc) - log_m_);
    }
    return out;
  }

  Array score(const Array& x) const override {
    check_input(x);
    const std::size_t d = spec_.d;
    Array g(x.shape());
    std::vector<double> lc(spec_.m), sc(d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* xi = &x(i, 0);
      component_logs(xi, lc);
      const double lse = logsumexp(lc);
      for (std::size_t k = 0; k < spec_.m; ++k) {
        const double r = std::exp(lc[k] - lse);
        component_score(xi, k, sc.data());
        for (std::size_t j = 0; j < d; ++j) g(i, j) += r * sc[j];
      }
    }
    return g;
  }

  // H = sum_k r_k (H_k + s_k s_k^T) - sbar sbar^T
  Array score_hvp(const Array& x, const Array& v) const override {
    check_input(x);
    const std::size_t d = spec_.d;
    Array h(x.shape());
    std::vector<double> lc(spec_.m), sc(d), sbar(d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* xi = &x(i, 0);
      const double* vi = &v(i, 0);
      component_logs(xi, lc);
      const double lse = logsumexp(lc);
      std::fill(sbar.begin(), sbar.end(), 0.0);
      for (std::size_t k = 0; k < spec_.m; ++k) {
        const double r = std::exp(lc[k] - lse);
        component_score(xi, k, sc.data());
        double sv = 0.0;
        for (std::size_t j = 0; j < d; ++j) sv += sc[j] * vi[j];
        const double* mu = &locations_[k * d];
        for (std::size_t j = 0; j < d; ++j) {
          h(i, j) += r * (component_hess_diag(xi[j] - mu[j]) * vi[j] + sc[j] * sv);
          sbar[j] += r * sc[j];
        }
      }
      double bv = 0.0;
      for (std::size_t j = 0; j < d; ++j) bv += sbar[j] * vi[j];
      for (std::size_t j = 0; j < d; ++j) h(i, j) -= sbar[j] * bv;
    }
    return h;
  }

  std::optional<double> log_z() const override { return 0.0; }
  bool has_sampler() const override { return true; }

  Array sample(std::size_t n, std::uint64_t seed) const override {
    const std::size_t d = spec_.d;
    Array x(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
      rng::Stream s(seed, i);
      const std::size_t k = s.below(spec_.m);
      for (std::size_t j = 0; j < d; ++j) {
        double e = s.normal();
        if (spec_.family == ComponentFamily::student_t2) e /= std::sqrt(-std::log(s.uniform()));
        x(i, j) = locations_[k * d + j] + e;
      }
    }
    return x;
  }

  std::size_t mode_count() const override { return spec_.m; }
  std::vector<std::size_t> assign_modes(const Array& x) const override {
    check_input(x);
    std::vector<std::size_t> out(x.rows());
    std::vector<double> lc(spec_.m);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      component_logs(&x(i, 0), lc);
      out[i] = static_cast<std::size_t>(std::max_element(lc.begin(), lc.end()) - lc.begin());
    }
    return out;
  }

 private:
  void init() { log_m_ = std::log(static_cast<double>(spec_.m)); }

  static double logsumexp(const std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double e : v) s += std::exp(e - mx);
    return mx + std::log(s);
  }

  // log of the 1-d Student-t(2) density: -log(2*sqrt 2) - 1.5 log(1 + y^2/2)
  static double log_t2(double y) { return -1.0397207708399179 - 1.5 * std::log1p(0.5 * y * y); }

  void component_logs(const double* x, std::vector<double>& out) const {
    const std::size_t d = spec_.d;
    for (std::size_t k = 0; k < spec_.m; ++k) {
      const double* mu = &locations_[k * d];
      double s = 0.0;
      if (spec_.family == ComponentFamily::gaussian) {
        for (std::size_t j = 0; j < d; ++j) s += (x[j] - mu[j]) * (x[j] - mu[j]);
        out[k] = -0.5 * s - 0.5 * static_cast<double>(d) * kLog2Pi;
      } else {
        for (std::size_t j = 0; j < d; ++j) s += log_t2(x[j] - mu[j]);
        out[k] = s;
      }
    }
  }

  void component_score(const double* x, std::size_t k, double* out) const {
    const std::size_t d = spec_.d;
    const double* mu = &locations_[k * d];
    for (std::size_t j = 0; j < d; ++j) {
      const double y = x[j] - mu[j];
      out[j] = spec_.family == ComponentFamily::gaussian ? -y : -3.0 * y / (2.0 + y * y);
    }
  }

  double component_hess_diag(double y) const {
    if (spec_.family == ComponentFamily::gaussian) return -1.0;
    const double q = 2.0 + y * y;
    return -3.0 * (2.0 - y * y) / (q * q);
  }

  MixtureSpec spec_;
  std::vector<double> locations_;
  bool explicit_locations_ = false;
  double log_m_ = 0.0;
};

}  // namespace dbridge
