#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dbridge/bridge.hpp"
#include "dbridge/core/error.hpp"
#include "dbridge/losses.hpp"

namespace dbridge {

enum class LossKind { rkl_ld, lv, rkl_r };

inline std::string to_string(LossKind l) {
  switch (l) {
    case LossKind::rkl_ld: return "rkl_ld";
    case LossKind::lv: return "lv";
    case LossKind::rkl_r: return "rkl_r";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "rkl_ld") return LossKind::rkl_ld;
  if (s == "lv") return LossKind::lv;
  if (s == "rkl_r") return LossKind::rkl_r;
  throw ConfigError("unknown loss '" + s + "' (expected rkl_ld, lv or rkl_r)");
}

enum class SinkhornPolicy { never, final, every_eval };

inline std::string to_string(SinkhornPolicy p) {
  return p == SinkhornPolicy::never ? "never" : p == SinkhornPolicy::final ? "final" : "every_eval";
}

inline SinkhornPolicy parse_sinkhorn_policy(const std::string& s) {
  if (s == "never") return SinkhornPolicy::never;
  if (s == "final") return SinkhornPolicy::final;
  if (s == "every_eval") return SinkhornPolicy::every_eval;
  throw ConfigError("unknown sinkhorn policy '" + s + "' (expected never, final or every_eval)");
}

struct RunConfig {
  std::string target = "manywell";
  Parameterization parameterization = Parameterization::cmcd;
  LossKind loss = LossKind::rkl_ld;
  Proposal proposal = Proposal::on_policy;
  std::size_t steps = 64;
  double dt = 0.0;
  std::size_t batch = 512;
  std::size_t iterations = 4000;
  double lr = 1e-3;
  double lr_sde = 0.0;  // 0: same as lr
  double sigma_init = 1.0;
  double prior_std_init = 1.0;
  bool learn_sigma = false;
  bool learn_prior = true;
  bool learn_schedule = true;
  std::size_t hidden = kDefaultHidden;
  std::size_t embed = kDefaultEmbed;
  std::uint64_t seed = 0;
  std::size_t eval_every = 250;
  std::size_t eval_paths = 2000;
  std::size_t metric_samples = 2000;
  SinkhornPolicy sinkhorn = SinkhornPolicy::final;
  double sinkhorn_epsilon = 0.0;  // 0: 1e-3 x mean pairwise cost
  double divergence_nats = 100.0;
  std::size_t nan_patience = 10;
  std::size_t checkpoint_every = 0;
  std::string out_dir;

  double sde_lr() const { return lr_sde > 0 ? lr_sde : lr; }

  BridgeConfig bridge(std::size_t dim) const {
    BridgeConfig c;
    c.kind = parameterization;
    c.dim = dim;
    c.steps = steps;
    c.dt = dt;
    c.sigma_init = sigma_init;
    c.prior_std_init = prior_std_init;
    const bool fixed = parameterization == Parameterization::fixed_forward;
    c.learn_sigma = fixed ? false : learn_sigma;
    c.learn_prior = fixed ? false : learn_prior;
    c.learn_schedule = parameterization == Parameterization::cmcd && learn_schedule;
    c.hidden = hidden;
    c.embed = embed;
    c.init_seed = seed;
    return c;
  }
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t idx = 0;
    const double d = std::stod(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

inline std::uint64_t to_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is out of range");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

}  // namespace detail

// key = value lines; '#' starts a comment; values may be double-quoted; [section] headers prefix
// the following keys with "section.".
inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    if (kv.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    kv[key] = value;
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_key_values(in);
}

inline KeyValues to_key_values(const RunConfig& c) {
  using detail::fmt_real;
  return {
      {"target", c.target},
      {"parameterization", to_string(c.parameterization)},
      {"loss", to_string(c.loss)},
      {"proposal", to_string(c.proposal)},
      {"steps", std::to_string(c.steps)},
      {"dt", fmt_real(c.dt)},
      {"batch", std::to_string(c.batch)},
      {"iterations", std::to_string(c.iterations)},
      {"lr", fmt_real(c.lr)},
      {"lr_sde", fmt_real(c.lr_sde)},
      {"sigma_init", fmt_real(c.sigma_init)},
      {"prior_std_init", fmt_real(c.prior_std_init)},
      {"learn_sigma", c.learn_sigma ? "true" : "false"},
      {"learn_prior", c.learn_prior ? "true" : "false"},
      {"learn_schedule", c.learn_schedule ? "true" : "false"},
      {"hidden", std::to_string(c.hidden)},
      {"embed", std::to_string(c.embed)},
      {"seed", std::to_string(c.seed)},
      {"eval_every", std::to_string(c.eval_every)},
      {"eval_paths", std::to_string(c.eval_paths)},
      {"metric_samples", std::to_string(c.metric_samples)},
      {"sinkhorn", to_string(c.sinkhorn)},
      {"sinkhorn_epsilon", fmt_real(c.sinkhorn_epsilon)},
      {"divergence_nats", fmt_real(c.divergence_nats)},
      {"nan_patience", std::to_string(c.nan_patience)},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
      {"out_dir", c.out_dir},
  };
}

inline void validate(const RunConfig& c) {
  if (!(c.lr > 0)) throw ConfigError("lr must be > 0");
  if (c.lr_sde < 0) throw ConfigError("lr_sde must be > 0 (or 0 for the model rate)");
  if (c.steps < 1) throw ConfigError("steps must be >= 1");
  if (c.batch < 2) throw ConfigError("batch must be >= 2");
  if (c.eval_paths < 2) throw ConfigError("eval_paths must be >= 2");
  if (!(c.sigma_init > 0) || !(c.prior_std_init > 0)) throw ConfigError("initial scales must be > 0");
  if (c.dt < 0) throw ConfigError("dt must be >= 0");
  if (!(c.divergence_nats > 0)) throw ConfigError("divergence_nats must be > 0");
  if (c.nan_patience < 1) throw ConfigError("nan_patience must be >= 1");
  if (c.proposal == Proposal::forward && c.loss != LossKind::lv)
    throw ConfigError("the forward proposal only applies to the lv loss");
  if (c.parameterization == Parameterization::fixed_forward && c.learn_sigma)
    throw ConfigError("fixed_forward keeps sigma frozen; set learn_sigma = false");
}

inline RunConfig run_config_from(const KeyValues& kv) {
  using namespace detail;
  RunConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "target") c.target = v;
    else if (k == "parameterization") c.parameterization = parse_parameterization(v);
    else if (k == "loss") c.loss = parse_loss(v);
    else if (k == "proposal") c.proposal = parse_proposal(v);
    else if (k == "steps") c.steps = to_count(k, v);
    else if (k == "dt") c.dt = to_real(k, v);
    else if (k == "batch") c.batch = to_count(k, v);
    else if (k == "iterations") c.iterations = to_count(k, v);
    else if (k == "lr") c.lr = to_real(k, v);
    else if (k == "lr_sde") c.lr_sde = to_real(k, v);
    else if (k == "sigma_init") c.sigma_init = to_real(k, v);
    else if (k == "prior_std_init") c.prior_std_init = to_real(k, v);
    else if (k == "learn_sigma") c.learn_sigma = to_bool(k, v);
    else if (k == "learn_prior") c.learn_prior = to_bool(k, v);
    else if (k == "learn_schedule") c.learn_schedule = to_bool(k, v);
    else if (k == "hidden") c.hidden = to_count(k, v);
    else if (k == "embed") c.embed = to_count(k, v);
    else if (k == "seed") c.seed = to_count(k, v);
    else if (k == "eval_every") c.eval_every = to_count(k, v);
    else if (k == "eval_paths") c.eval_paths = to_count(k, v);
    else if (k == "metric_samples") c.metric_samples = to_count(k, v);
    else if (k == "sinkhorn") c.sinkhorn = parse_sinkhorn_policy(v);
    else if (k == "sinkhorn_epsilon") c.sinkhorn_epsilon = to_real(k, v);
    else if (k == "divergence_nats") c.divergence_nats = to_real(k, v);
    else if (k == "nan_patience") c.nan_patience = to_count(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = to_count(k, v);
    else if (k == "out_dir") c.out_dir = v;
    else throw ConfigError("unknown config key '" + k + "'");
  }
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from(read_key_values(path)); }

}  // namespace dbridge
