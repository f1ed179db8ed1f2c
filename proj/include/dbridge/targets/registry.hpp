#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "dbridge/targets/brownian.hpp"
#include "dbridge/targets/funnel.hpp"
#include "dbridge/targets/manywell.hpp"
#include "dbridge/targets/mixture.hpp"
#include "dbridge/targets/target.hpp"

namespace dbridge {

inline TargetPtr make_gmm(std::size_t d, std::size_t m, double halfwidth, std::uint64_t seed) {
  return std::make_shared<MixtureTarget>(MixtureSpec{d, m, halfwidth, seed, ComponentFamily::gaussian});
}

inline TargetPtr make_mos(std::size_t d, std::size_t m, double halfwidth, std::uint64_t seed) {
  return std::make_shared<MixtureTarget>(MixtureSpec{d, m, halfwidth, seed, ComponentFamily::student_t2});
}

inline TargetPtr make_funnel(std::size_t d = 10) { return std::make_shared<FunnelTarget>(d); }

inline TargetPtr make_manywell(std::size_t d = 5, std::size_t m = 5, double delta = 4.0) {
  return std::make_shared<ManyWellTarget>(d, m, delta);
}

inline TargetPtr make_brownian(std::uint64_t seed = 0) { return std::make_shared<BrownianTarget>(seed); }

inline TargetPtr make_gaussian(std::size_t d, double mean = 0.0, double std = 1.0) {
  return std::make_shared<DiagonalGaussian>(std::vector<double>(d, mean), std::vector<double>(d, std));
}

struct TargetSpec {
  std::string kind;
  std::map<std::string, std::string> options;
};

// "kind" or "kind:key=value,key=value".
inline TargetSpec parse_target_spec(const std::string& text) {
  TargetSpec spec;
  const auto colon = text.find(':');
  spec.kind = text.substr(0, colon);
  if (spec.kind.empty()) throw ConfigError("empty target name");
  if (colon == std::string::npos) return spec;
  std::string rest = text.substr(colon + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!item.empty()) {
      const auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("target option '" + item + "' is not key=value");
      spec.options[item.substr(0, eq)] = item.substr(eq + 1);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return spec;
}

namespace detail {

class OptionReader {
 public:
  explicit OptionReader(const TargetSpec& s) : s_(s) {}

  double real(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = s_.options.find(key);
    if (it == s_.options.end()) return fallback;
    try {
      std::size_t idx = 0;
      double v = std::stod(it->second, &idx);
      if (idx != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("target option " + key + "='" + it->second + "' is not a number");
    }
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const double v = real(key, static_cast<double>(fallback));
    if (v < 0 || v != std::floor(v)) throw ConfigError("target option " + key + " must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }

  void finish() const {
    for (auto& [k, v] : s_.options)
      if (!used_.count(k)) throw ConfigError("unknown option '" + k + "' for target " + s_.kind);
  }

 private:
  const TargetSpec& s_;
  std::set<std::string> used_;
};

}  // namespace detail

// Builds a target from its spec string. Presets: gmm40, mos10, funnel, manywell, brownian, gaussian.
// Any target accepts shift=c, which adds c to the energy.
inline TargetPtr make_target(const std::string& text) {
  const TargetSpec spec = parse_target_spec(text);
  detail::OptionReader opt(spec);
  TargetPtr t;
  const std::string& k = spec.kind;
  if (k == "gmm" || k == "gmm40") {
    const bool preset = k == "gmm40";
    t = make_gmm(opt.count("d", preset ? 50 : 2), opt.count("m", preset ? 40 : 8),
                 opt.real("halfwidth", preset ? 40.0 : 10.0), opt.count("seed", 0));
  } else if (k == "mos" || k == "mos10") {
    const bool preset = k == "mos10";
    t = make_mos(opt.count("d", preset ? 50 : 2), opt.count("m", preset ? 10 : 8),
                 opt.real("halfwidth", preset ? 10.0 : 10.0), opt.count("seed", 0));
  } else if (k == "funnel") {
    t = make_funnel(opt.count("d", 10));
  } else if (k == "manywell") {
    t = make_manywell(opt.count("d", 5), opt.count("m", 5), opt.real("delta", 4.0));
  } else if (k == "brownian") {
    t = make_brownian(opt.count("seed", 0));
  } else if (k == "gaussian") {
    t = make_gaussian(opt.count("d", 2), opt.real("mean", 0.0), opt.real("std", 1.0));
  } else {
    throw ConfigError("unknown target '" + k + "'");
  }
  const double shift = opt.real("shift", 0.0);
  opt.finish();
  if (shift != 0.0) t = std::make_shared<ShiftedTarget>(t, shift);
  return t;
}

}  // namespace dbridge
