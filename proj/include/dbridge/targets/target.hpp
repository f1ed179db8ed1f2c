#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dbridge/core/array.hpp"
#include "dbridge/core/error.hpp"
#include "dbridge/core/random.hpp"

namespace dbridge {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

// Unnormalized density rho(x) = exp(-E(x)) over R^N. All batch functions take x as (B x N).
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;

  // E(x) per row.
  virtual std::vector<double> energy(const Array& x) const = 0;
  // grad log rho = -grad E, per row.
  virtual Array score(const Array& x) const = 0;
  // Per row: (Hessian of log rho at x_i) * v_i.
  virtual Array score_hvp(const Array& x, const Array& v) const = 0;

  virtual std::optional<double> log_z() const { return std::nullopt; }

  virtual bool has_sampler() const { return false; }
  // Row i depends only on (seed, i).
  virtual Array sample(std::size_t /*n*/, std::uint64_t /*seed*/) const {
    throw UsageError("target " + name() + " has no exact sampler");
  }

  // Number of modes for mode-coverage metrics (0: not defined for this target).
  virtual std::size_t mode_count() const { return 0; }
  virtual std::vector<std::size_t> assign_modes(const Array& /*x*/) const {
    throw UsageError("target " + name() + " has no mode list");
  }

  std::vector<double> log_density(const Array& x) const {
    auto e = energy(x);
    for (auto& v : e) v = -v;
    return e;
  }

 protected:
  void check_input(const Array& x) const {
    if (x.rank() != 2 || x.cols() != dim())
      throw ConfigError(name() + ": expected (B x " + std::to_string(dim()) + ") input, got " +
                        shape_string(x.shape()));
  }
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

// N(mean, diag(std^2)); normalized.
class DiagonalGaussian final : public TargetDensity {
 public:
  DiagonalGaussian(std::vector<double> mean, std::vector<double> std) : mean_(std::move(mean)), std_(std::move(std)) {
    if (mean_.empty() || mean_.size() != std_.size()) throw ConfigError("gaussian: mean/std size mismatch");
    for (double s : std_)
      if (!(s > 0)) throw ConfigError("gaussian: std must be positive");
    log_norm_ = 0.0;
    for (double s : std_) log_norm_ += 0.5 * kLog2Pi + std::log(s);
  }

  std::string name() const override {
    return "gaussian:d=" + std::to_string(mean_.size()) + (uniform() ? ",mean=" + fmt(mean_[0]) + ",std=" + fmt(std_[0]) : "");
  }
  std::size_t dim() const override { return mean_.size(); }

  std::vector<double> energy(const Array& x) const override {
    check_input(x);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) {
        const double z = (x(i, j) - mean_[j]) / std_[j];
        s += 0.5 * z * z;
      }
      out[i] = s + log_norm_;
    }
    return out;
  }

  Array score(const Array& x) const override {
    check_input(x);
    Array g(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) g(i, j) = -(x(i, j) - mean_[j]) / (std_[j] * std_[j]);
    return g;
  }

  Array score_hvp(const Array& x, const Array& v) const override {
    check_input(x);
    Array h(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) h(i, j) = -v(i, j) / (std_[j] * std_[j]);
    return h;
  }

  std::optional<double> log_z() const override { return 0.0; }
  bool has_sampler() const override { return true; }
  Array sample(std::size_t n, std::uint64_t seed) const override {
    Array x(Shape{n, dim()});
    for (std::size_t i = 0; i < n; ++i) {
      rng::Stream s(seed, i);
      for (std::size_t j = 0; j < dim(); ++j) x(i, j) = mean_[j] + std_[j] * s.normal();
    }
    return x;
  }

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

 private:
  bool uniform() const {
    for (std::size_t j = 1; j < mean_.size(); ++j)
      if (mean_[j] != mean_[0] || std_[j] != std_[0]) return false;
    return true;
  }
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  std::vector<double> mean_, std_;
  double log_norm_;
};

// E'(x) = E(x) + c. The score and Hessian are forwarded untouched.
class ShiftedTarget final : public TargetDensity {
 public:
  ShiftedTarget(TargetPtr inner, double c) : inner_(std::move(inner)), c_(c) {}

  std::string name() const override {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", c_);
    return inner_->name() + (inner_->name().find(':') == std::string::npos ? ":" : ",") + "shift=" + buf;
  }
  std::size_t dim() const override { return inner_->dim(); }
  std::vector<double> energy(const Array& x) const override {
    auto e = inner_->energy(x);
    for (auto& v : e) v += c_;
    return e;
  }
  Array score(const Array& x) const override { return inner_->score(x); }
  Array score_hvp(const Array& x, const Array& v) const override { return inner_->score_hvp(x, v); }
  std::optional<double> log_z() const override {
    auto z = inner_->log_z();
    if (z) return *z - c_;
    return std::nullopt;
  }
  bool has_sampler() const override { return inner_->has_sampler(); }
  Array sample(std::size_t n, std::uint64_t seed) const override { return inner_->sample(n, seed); }
  std::size_t mode_count() const override { return inner_->mode_count(); }
  std::vector<std::size_t> assign_modes(const Array& x) const override { return inner_->assign_modes(x); }

  const TargetDensity& inner() const { return *inner_; }
  double shift() const { return c_; }

 private:
  TargetPtr inner_;
  double c_;
};

}  // namespace dbridge
