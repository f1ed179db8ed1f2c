#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "dbridge/harness/config.hpp"
#include "dbridge/harness/optim.hpp"
#include "dbridge/losses.hpp"
#include "dbridge/targets/registry.hpp"

namespace dbridge {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "dbridge-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string code_version() {
#ifdef DBRIDGE_VERSION
  return DBRIDGE_VERSION;
#else
  return "unversioned";
#endif
}

// Non-finite doubles travel as strings so they survive a round trip.
inline json real_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw ConfigError("expected a number in JSON, got " + j.dump());
}

inline json array_to_json(const Array& a) {
  json values = json::array();
  for (double v : a.values()) values.push_back(real_to_json(v));
  return {{"shape", a.shape()}, {"values", values}};
}

inline Array array_from_json(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> v;
  for (const auto& e : j.at("values")) v.push_back(real_from_json(e));
  return Array(std::move(shape), std::move(v));
}

inline json grad_report_to_json(const GradReport& r) {
  json j;
  for (Block b : {Block::alpha, Block::phi, Block::nu}) {
    json blk = json::object();
    for (const auto& [name, g] : r.block(b)) blk[name] = array_to_json(g);
    j[block_name(b)] = blk;
  }
  j["baseline"] = real_to_json(r.baseline);
  j["log_ratio_mean"] = real_to_json(r.log_ratio_mean);
  j["log_ratio_variance"] = real_to_json(r.log_ratio_variance);
  j["valid_paths"] = r.valid_paths;
  j["invalid_paths"] = r.invalid_paths;
  j["ess"] = r.ess ? real_to_json(*r.ess) : json(nullptr);
  return j;
}

inline GradReport grad_report_from_json(const json& j) {
  GradReport r;
  for (Block b : {Block::alpha, Block::phi, Block::nu})
    for (const auto& [name, g] : j.at(block_name(b)).items()) r.block(b)[name] = array_from_json(g);
  r.baseline = real_from_json(j.at("baseline"));
  r.log_ratio_mean = real_from_json(j.at("log_ratio_mean"));
  r.log_ratio_variance = real_from_json(j.at("log_ratio_variance"));
  r.valid_paths = j.at("valid_paths").get<std::size_t>();
  r.invalid_paths = j.at("invalid_paths").get<std::size_t>();
  if (!j.at("ess").is_null()) r.ess = real_from_json(j.at("ess"));
  return r;
}

// Trainer bookkeeping that must survive a restart for the continued run to match an uninterrupted one.
struct TrainerState {
  std::size_t next_iteration = 0;
  double best_elbo = -std::numeric_limits<double>::infinity();
  std::size_t nan_streak = 0;
};

struct Checkpoint {
  RunConfig config;
  ParamStore params;
  RAdamState optimizer;
  TrainerState trainer;
};

inline json checkpoint_to_json(const RunConfig& config, const ParamStore& params, const RAdamState& opt,
                               const TrainerState& trainer) {
  json j;
  j["__meta__"] = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"code_version", code_version()}};
  j["config"] = to_key_values(config);
  json ps = json::array();
  for (const auto& p : params.all()) ps.push_back({{"name", p.name}, {"value", array_to_json(p.value)}});
  j["params"] = ps;
  json m = json::array(), v = json::array();
  for (const auto& a : opt.m) m.push_back(array_to_json(a));
  for (const auto& a : opt.v) v.push_back(array_to_json(a));
  j["optimizer"] = {{"step", opt.step}, {"skipped", opt.skipped}, {"m", m}, {"v", v}};
  j["trainer"] = {{"next_iteration", trainer.next_iteration},
                  {"best_elbo", real_to_json(trainer.best_elbo)},
                  {"nan_streak", trainer.nan_streak}};
  return j;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(1) << '\n';
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Rebuilds the model from the stored config and overwrites every parameter with the stored value.
inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    const auto& meta = j.at("__meta__");
    if (meta.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("not a checkpoint file");
    if (meta.at("version").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    Checkpoint c;
    c.config = run_config_from(j.at("config").get<KeyValues>());
    BridgeModel model(c.config.bridge(make_target(c.config.target)->dim()));
    c.params = model.params();
    const auto& ps = j.at("params");
    if (ps.size() != c.params.size()) throw ConfigError("checkpoint parameter count does not match its config");
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Parameter& p = c.params[k];
      if (ps[k].at("name").get<std::string>() != p.name)
        throw ConfigError("checkpoint parameter " + ps[k].at("name").get<std::string>() + " where " + p.name +
                          " was expected");
      Array v = array_from_json(ps[k].at("value"));
      if (!v.same_shape(p.value)) throw ConfigError("checkpoint shape mismatch for " + p.name);
      p.value = std::move(v);
    }
    const auto& o = j.at("optimizer");
    c.optimizer.step = o.at("step").get<std::size_t>();
    c.optimizer.skipped = o.at("skipped").get<std::size_t>();
    for (const auto& a : o.at("m")) c.optimizer.m.push_back(array_from_json(a));
    for (const auto& a : o.at("v")) c.optimizer.v.push_back(array_from_json(a));
    if (c.optimizer.m.size() != c.params.size() || c.optimizer.v.size() != c.params.size())
      throw ConfigError("checkpoint optimizer state does not match the parameters");
    const auto& t = j.at("trainer");
    c.trainer.next_iteration = t.at("next_iteration").get<std::size_t>();
    c.trainer.best_elbo = real_from_json(t.at("best_elbo"));
    c.trainer.nan_streak = t.at("nan_streak").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json(path)); }

// A model carrying the checkpoint's parameter values.
inline BridgeModel model_from(const Checkpoint& c) {
  BridgeModel m(c.config.bridge(c.params.at("prior.mean").value.size()));
  for (std::size_t k = 0; k < m.params().size(); ++k) m.params()[k].value = c.params[k].value;
  return m;
}

}  // namespace dbridge
