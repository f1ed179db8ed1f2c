#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dbridge/dbridge.hpp"

using namespace dbridge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitConfig = 3;

json check_to_json(const check::CheckResult& r) {
  return {{"name", r.name}, {"error", real_to_json(r.error)}, {"tolerance", r.tolerance}, {"passed", r.passed()}};
}

int run_train(const std::string& config_path) {
  const RunConfig cfg = load_run_config(config_path);
  TrainOptions opt;
  opt.on_row = [](const MetricRow& r) {
    if (r.metric == "grad_norm" || r.metric == "train_invalid_paths") return;
    std::cerr << csv_line(r) << '\n';
  };
  const TrainOutcome out = train(cfg, opt);
  const RunManifest& m = out.manifest;
  json summary = {{"iterations_run", m.iterations_run},
                  {"skipped_steps", m.skipped_steps},
                  {"diverged", m.diverged},
                  {"wall_clock_seconds", m.wall_clock_seconds}};
  if (auto e = m.last("elbo")) summary["final_elbo"] = real_to_json(e->value);
  if (m.diverged) {
    summary["divergence_iteration"] = *m.divergence_iteration;
    summary["divergence_reason"] = m.divergence_reason;
  }
  std::cout << summary.dump(1) << '\n';
  return m.diverged ? kExitDiverged : kExitOk;
}

int run_eval(const std::string& path, const std::string& target_name, std::size_t samples, std::uint64_t seed) {
  const Checkpoint c = load_checkpoint(path);
  const BridgeModel model = model_from(c);
  const TargetPtr target = make_target(target_name.empty() ? c.config.target : target_name);
  if (target->dim() != model.dim())
    throw ConfigError("target dimension " + std::to_string(target->dim()) + " does not match the checkpoint's " +
                      std::to_string(model.dim()));
  const TrajectoryBatch sim = simulate_reverse(model, *target, samples, seed);
  const TrajectoryBatch valid = sim.valid_only();
  json j = {{"target", target->name()}, {"paths", samples}, {"invalid_paths", sim.invalid_count()}};
  j["joint_entropy"] = real_to_json(joint_entropy_closed_form(model));
  if (valid.batch == 0) {
    j["elbo"] = nullptr;
  } else {
    const ElboEstimate e = elbo(valid);
    j["elbo"] = real_to_json(e.value);
    j["elbo_stderr"] = real_to_json(e.standard_error);
    if (auto lz = target->log_z()) j["log_z"] = real_to_json(*lz);
    const Array x = valid.samples();
    if (target->mode_count() > 0) j["emc"] = real_to_json(emc(*target, x));
    if (target->has_sampler() && valid.batch >= 2) {
      const Array ref = target->sample(valid.batch, rng::hash(seed, 0x72656665, 0, 0));
      const MmdResult mm = mmd(x, ref);
      j["mmd"] = real_to_json(mm.value);
      const SinkhornResult s = sinkhorn_divergence(x, ref);
      j["sinkhorn"] = real_to_json(s.divergence);
      j["sinkhorn_epsilon"] = real_to_json(s.epsilon);
      j["sinkhorn_converged"] = s.converged;
    }
  }
  std::cout << j.dump(1) << '\n';
  return kExitOk;
}

int run_sample(const std::string& path, std::size_t n, const std::string& out_path, std::uint64_t seed) {
  const Checkpoint c = load_checkpoint(path);
  const BridgeModel model = model_from(c);
  const TargetPtr target = make_target(c.config.target);
  const TrajectoryBatch sim = simulate_reverse(model, *target, n, seed);
  const Array x = sim.samples();
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write " + out_path);
  out.precision(17);
  for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? "," : "") << 'x' << j;
  out << ",valid\n";
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(i, j);
    out << ',' << (sim.valid[i] ? 1 : 0) << '\n';
  }
  std::cerr << "wrote " << x.rows() << " samples (" << sim.invalid_count() << " invalid) to " << out_path << '\n';
  return kExitOk;
}

int run_gradcheck(const std::string& suite) {
  json j;
  bool ok = true;
  if (suite == "all" || suite == "equivalence") {
    json eq = json::array();
    for (Parameterization k : {Parameterization::fixed_forward, Parameterization::dbs, Parameterization::cmcd}) {
      const check::EquivalenceResult r = check::gradient_equivalence(k);
      const bool pass = k == Parameterization::fixed_forward ? r.reports_equal : r.alpha_equal;
      ok = ok && pass;
      eq.push_back({{"parameterization", to_string(k)},
                    {"reports_equal", r.reports_equal},
                    {"alpha_equal", r.alpha_equal},
                    {"alpha_entries", r.alpha_entries},
                    {"seconds", r.seconds},
                    {"passed", pass}});
    }
    j["equivalence"] = eq;
  }
  if (suite == "all" || suite == "fd") {
    json fd = json::array();
    for (const auto& r : check::raw_op_checks()) {
      ok = ok && r.passed();
      fd.push_back(check_to_json(r));
    }
    for (const auto& r : check::model_checks()) {
      ok = ok && r.passed();
      fd.push_back(check_to_json(r));
    }
    j["fd"] = fd;
  }
  if (suite == "all" || suite == "enumeration") {
    json en = json::array();
    for (const auto& r : check::enumeration_checks()) {
      ok = ok && r.passed();
      en.push_back(check_to_json(r));
    }
    j["enumeration"] = en;
  }
  j["passed"] = ok;
  std::cout << j.dump(1) << '\n';
  return ok ? kExitOk : kExitFailure;
}

json table_to_json(const dpi::Table& t) { return {{t[0][0], t[0][1]}, {t[1][0], t[1][1]}}; }

json decomposition_to_json(const dpi::Decomposition& d) {
  return {{"var_marginal", d.var_marginal}, {"var_conditional", d.var_conditional}, {"covariance", d.covariance},
          {"var_joint", d.var_joint},       {"gap", d.gap},                         {"identity_residual", d.identity_residual}};
}

int run_dpi(std::size_t search, std::uint64_t seed) {
  const dpi::FinitePair pr = dpi::counterexample();
  const dpi::Decomposition d = dpi::dpi_gap(pr);
  const dpi::KlPair kl = dpi::kl_levels(pr);
  json j;
  j["counterexample"] = {{"q", table_to_json(pr.q())},
                         {"p", table_to_json(pr.p())},
                         {"log_variance", decomposition_to_json(d)},
                         {"log_variance_violates", d.gap < 0},
                         {"kl_joint", kl.joint},
                         {"kl_marginal", kl.marginal},
                         {"kl_gap", kl.gap()}};
  if (search > 0) {
    const dpi::SearchResult r = dpi::violation_search(seed, search);
    json worst = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(5, r.violations.size()); ++i)
      worst.push_back({{"q", table_to_json(r.violations[i].pair.q())},
                       {"p", table_to_json(r.violations[i].pair.p())},
                       {"log_variance", decomposition_to_json(r.violations[i].decomposition)}});
    j["search"] = {{"seed", seed},
                   {"trials", r.trials},
                   {"violations", r.violations.size()},
                   {"max_identity_residual", r.max_identity_residual},
                   {"min_kl_gap", r.min_kl_gap},
                   {"most_negative", worst}};
  }
  std::cout << j.dump(1) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-bridge samplers: training, evaluation and gradient diagnostics"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);
  app.footer("Set DBRIDGE_THREADS to cap worker threads. Exit codes: 0 ok, 1 failed check, 2 divergence, 3 config error.");

  std::string config_path, checkpoint, target, out_path, suite = "all";
  std::size_t samples = 2000, n = 1000, search = 0;
  std::uint64_t seed = 0;

  auto* train_cmd = app.add_subcommand("train", "train a sampler from a key = value config file");
  train_cmd->add_option("--config", config_path, "config file")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  eval_cmd->add_option("--target", target, "target spec (default: the checkpoint's)");
  eval_cmd->add_option("--samples", samples, "number of reverse paths")->check(CLI::Range(2, 10000000));
  eval_cmd->add_option("--seed", seed, "simulation seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "gradient identities, finite differences and enumeration");
  grad_cmd->add_option("--suite", suite, "which suite")->check(CLI::IsMember({"all", "equivalence", "fd", "enumeration"}));

  auto* dpi_cmd = app.add_subcommand("dpi", "log-variance data-processing counterexample as JSON");
  dpi_cmd->add_option("--search", search, "random 2x2 pairs to search for violations");
  dpi_cmd->add_option("--seed", seed, "search seed");

  auto* sample_cmd = app.add_subcommand("sample", "write terminal samples of a checkpoint to CSV");
  sample_cmd->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  sample_cmd->add_option("--n", n, "number of samples")->check(CLI::Range(1, 100000000));
  sample_cmd->add_option("--out", out_path, "output CSV")->required();
  sample_cmd->add_option("--seed", seed, "simulation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(config_path);
    if (*eval_cmd) return run_eval(checkpoint, target, samples, seed);
    if (*grad_cmd) return run_gradcheck(suite);
    if (*dpi_cmd) return run_dpi(search, seed);
    if (*sample_cmd) return run_sample(checkpoint, n, out_path, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
