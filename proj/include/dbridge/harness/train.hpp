#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dbridge/harness/checkpoint.hpp"
#include "dbridge/harness/config.hpp"
#include "dbridge/harness/optim.hpp"
#include "dbridge/losses.hpp"
#include "dbridge/metrics.hpp"
#include "dbridge/targets/registry.hpp"

namespace dbridge {

struct MetricRow {
  std::size_t iteration = 0;
  std::string metric;
  double value = 0.0;
  double standard_error = 0.0;
  std::string flags;

  // NaN-aware, so a stream containing NaN still compares equal to itself.
  friend bool operator==(const MetricRow& a, const MetricRow& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.iteration == b.iteration && a.metric == b.metric && same(a.value, b.value) &&
           same(a.standard_error, b.standard_error) && a.flags == b.flags;
  }
};

inline constexpr const char* kDivergenceRule =
    "diverged when an ELBO (training batch or evaluation) falls more than divergence_nats below the best ELBO "
    "seen so far, or when nan_patience consecutive steps produce non-finite gradients or no valid paths";

struct RunManifest {
  RunConfig config;
  std::string code_version;
  std::vector<MetricRow> rows;
  bool diverged = false;
  std::optional<std::size_t> divergence_iteration;
  std::string divergence_reason;
  std::size_t iterations_run = 0;
  std::size_t skipped_steps = 0;
  std::optional<double> log_z;
  double wall_clock_seconds = 0.0;

  std::vector<MetricRow> metric(const std::string& name) const {
    std::vector<MetricRow> out;
    for (const auto& r : rows)
      if (r.metric == name) out.push_back(r);
    return out;
  }
  std::optional<MetricRow> last(const std::string& name) const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      if (it->metric == name) return *it;
    return std::nullopt;
  }
};

inline json manifest_to_json(const RunManifest& m) {
  json rows = json::array();
  for (const auto& r : m.rows)
    rows.push_back({{"iteration", r.iteration},
                    {"metric", r.metric},
                    {"value", real_to_json(r.value)},
                    {"stderr", real_to_json(r.standard_error)},
                    {"flags", r.flags}});
  json j;
  j["config"] = to_key_values(m.config);
  j["code_version"] = m.code_version;
  j["diverged"] = m.diverged;
  j["divergence_iteration"] = m.divergence_iteration ? json(*m.divergence_iteration) : json(nullptr);
  j["divergence_reason"] = m.divergence_reason;
  j["divergence_rule"] = kDivergenceRule;
  j["iterations_run"] = m.iterations_run;
  j["skipped_steps"] = m.skipped_steps;
  j["log_z"] = m.log_z ? real_to_json(*m.log_z) : json(nullptr);
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["rows"] = rows;
  return j;
}

inline std::string csv_line(const MetricRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.iteration << ',' << r.metric << ',' << r.value << ',' << r.standard_error << ',' << r.flags;
  return os.str();
}

inline constexpr const char* kCsvHeader = "iteration,metric,value,stderr,flags";

struct TrainOutcome {
  RunManifest manifest;
  BridgeModel model;
  RAdamState optimizer;
  TrainerState trainer;

  json checkpoint() const { return checkpoint_to_json(manifest.config, model.params(), optimizer, trainer); }
};

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  // Stop (without training step or evaluation) when this iteration is reached; the outcome then holds
  // exactly the state a checkpoint at that iteration would.
  std::optional<std::size_t> stop_at;
  std::function<void(const MetricRow&)> on_row;
};

namespace detail {

inline std::uint64_t train_seed(std::uint64_t seed, std::size_t k) { return rng::hash(seed, 0x7472616e, k, 0); }
inline std::uint64_t eval_seed(std::uint64_t seed, std::size_t k) { return rng::hash(seed, 0x6576616c, k, 0); }
inline std::uint64_t reference_seed(std::uint64_t seed) { return rng::hash(seed, 0x72656665, 0, 0); }

inline Array first_rows(const Array& a, std::size_t n) {
  Array out(Shape{n, a.cols()});
  std::copy(a.data(), a.data() + n * a.cols(), out.data());
  return out;
}

}  // namespace detail

// Simulate -> gradient -> RAdam step, with periodic evaluation and divergence detection.
inline TrainOutcome train(const RunConfig& cfg, const TrainOptions& options = {}) {
  validate(cfg);
  const auto wall_start = std::chrono::steady_clock::now();
  const TargetPtr target = make_target(cfg.target);
  if (cfg.proposal == Proposal::forward && !target->has_sampler())
    throw ConfigError("the forward proposal needs a target with an exact sampler");

  TrainOutcome out{RunManifest{}, BridgeModel(cfg.bridge(target->dim())), RAdamState{}, TrainerState{}};
  BridgeModel& model = out.model;
  RAdam opt(model.params());
  TrainerState& st = out.trainer;
  if (options.resume) {
    const Checkpoint& c = *options.resume;
    if (to_key_values(c.config) != to_key_values(cfg)) throw ConfigError("checkpoint was written by a different config");
    for (std::size_t k = 0; k < model.params().size(); ++k) model.params()[k].value = c.params[k].value;
    opt.state() = c.optimizer;
    st = c.trainer;
  }

  RunManifest& man = out.manifest;
  man.config = cfg;
  man.code_version = code_version();
  man.log_z = target->log_z();

  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/metrics.csv";
    const bool append = options.resume && std::filesystem::exists(path);
    csv.open(path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw ConfigError("cannot write " + path);
    if (!append) csv << kCsvHeader << '\n';
  }
  auto emit = [&](std::size_t k, std::string name, double v, double se = 0.0, std::string flags = "") {
    MetricRow r{k, std::move(name), v, se, std::move(flags)};
    if (csv.is_open()) csv << csv_line(r) << '\n';
    if (options.on_row) options.on_row(r);
    man.rows.push_back(std::move(r));
  };
  auto diverge = [&](std::size_t k, const std::string& why) {
    if (man.diverged) return;
    man.diverged = true;
    man.divergence_iteration = k;
    man.divergence_reason = why;
  };
  auto check_elbo = [&](std::size_t k, double e, const char* source) {
    if (!std::isfinite(e)) return;
    if (e < st.best_elbo - cfg.divergence_nats) diverge(k, std::string(source) + " ELBO dropped below best - divergence_nats");
    st.best_elbo = std::max(st.best_elbo, e);
  };

  const std::size_t n_ref = target->has_sampler() ? cfg.metric_samples : 0;
  const Array reference = n_ref > 0 ? target->sample(n_ref, detail::reference_seed(cfg.seed)) : Array(Shape{0, target->dim()});

  auto evaluate = [&](std::size_t k, bool final) {
    const TrajectoryBatch sim = simulate_reverse(model, *target, cfg.eval_paths, detail::eval_seed(cfg.seed, k));
    const TrajectoryBatch valid = sim.valid_only();
    emit(k, "invalid_paths", static_cast<double>(sim.invalid_count()));
    if (valid.batch == 0) {
      emit(k, "elbo", std::numeric_limits<double>::quiet_NaN(), 0.0, "no_valid_paths");
      return;
    }
    const ElboEstimate e = elbo(valid);
    emit(k, "elbo", e.value, e.standard_error);
    emit(k, "joint_entropy", joint_entropy_closed_form(model));
    const std::size_t n = std::min(cfg.metric_samples, valid.batch);
    if (n > 0 && target->mode_count() > 0) emit(k, "emc", emc(*target, detail::first_rows(valid.samples(), n)));
    if (n > 0 && n_ref > 0) {
      const Array x = detail::first_rows(valid.samples(), n);
      const Array ref = detail::first_rows(reference, std::min(n, n_ref));
      const MmdResult mm = mmd(x, ref);
      emit(k, "mmd", mm.value, 0.0, mm.clamped ? "clamped" : "");
      if (cfg.sinkhorn == SinkhornPolicy::every_eval || (final && cfg.sinkhorn == SinkhornPolicy::final)) {
        SinkhornOptions so;
        so.epsilon = cfg.sinkhorn_epsilon;
        const SinkhornResult s = sinkhorn_divergence(x, ref, so);
        const std::string flag = s.converged ? "" : "nonconverged";
        emit(k, "sinkhorn", s.divergence, 0.0, flag);
        emit(k, "sinkhorn_raw", s.raw_cost, 0.0, flag);
        emit(k, "sinkhorn_epsilon", s.epsilon);
      }
    }
    check_elbo(k, e.value, "evaluation");
  };

  auto lr_at = [&](std::size_t k) {
    LearningRates lr;
    lr.model = cosine_lr(k, cfg.iterations, cfg.lr);
    lr.sde = lr.interp = cosine_lr(k, cfg.iterations, cfg.sde_lr());
    return lr;
  };

  const bool on_policy = !(cfg.loss == LossKind::lv && cfg.proposal == Proposal::forward);
  std::size_t k = st.next_iteration;
  for (;; ++k) {
    st.next_iteration = k;
    if (options.stop_at && k == *options.stop_at) break;
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0 && k > 0)
      write_json(cfg.out_dir + "/checkpoint_" + std::to_string(k) + ".json",
                 checkpoint_to_json(cfg, model.params(), opt.state(), st));
    const bool final = k == cfg.iterations;
    if (final || (cfg.eval_every > 0 && k % cfg.eval_every == 0)) evaluate(k, final);
    if (final || man.diverged) break;

    const std::uint64_t seed = detail::train_seed(cfg.seed, k);
    std::optional<GradReport> rep;
    try {
      switch (cfg.loss) {
        case LossKind::rkl_ld: rep = grad_rkl_ld(model, *target, simulate_reverse(model, *target, cfg.batch, seed)); break;
        case LossKind::lv:
          rep = on_policy ? grad_lv(model, *target, simulate_reverse(model, *target, cfg.batch, seed))
                          : grad_lv(model, *target, simulate_forward(model, *target, cfg.batch, seed), Proposal::forward);
          break;
        case LossKind::rkl_r: rep = grad_rkl_r(model, *target, cfg.batch, seed); break;
      }
    } catch (const EstimationError&) {
      rep.reset();
    }

    bool bad = !rep;
    if (rep) {
      const double n = static_cast<double>(rep->valid_paths);
      if (on_policy) {
        const double e = -rep->log_ratio_mean;
        emit(k, "train_elbo", e, std::sqrt(rep->log_ratio_variance / n));
        check_elbo(k, e, "training");
        if (!std::isfinite(e)) bad = true;
      } else {
        emit(k, "train_lv", 0.5 * rep->log_ratio_variance);
      }
      if (rep->invalid_paths > 0) emit(k, "train_invalid_paths", static_cast<double>(rep->invalid_paths));
      const StepInfo info = opt.step(model.params(), rep->aligned(model.params()), lr_at(k));
      emit(k, "grad_norm", info.grad_norm, 0.0, info.applied ? "" : "skipped");
      if (!info.applied) bad = true;
    } else {
      ++opt.state().skipped;
      emit(k, "train_elbo", std::numeric_limits<double>::quiet_NaN(), 0.0, "no_valid_paths");
    }
    st.nan_streak = bad ? st.nan_streak + 1 : 0;
    if (st.nan_streak >= cfg.nan_patience) diverge(k, "non-finite gradients or no valid paths for nan_patience steps");
    if (man.diverged) {
      ++k;
      st.next_iteration = k;
      break;
    }
  }

  man.iterations_run = st.next_iteration;
  man.skipped_steps = opt.state().skipped;
  out.optimizer = opt.state();
  man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (!cfg.out_dir.empty()) {
    write_json(cfg.out_dir + "/manifest.json", manifest_to_json(man));
    write_json(cfg.out_dir + (options.stop_at ? "/checkpoint_" + std::to_string(k) + ".json" : "/checkpoint.json"),
               out.checkpoint());
  }
  return out;
}

}  // namespace dbridge
