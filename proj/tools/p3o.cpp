// Command-line front end: training, evaluation, smoothing, plot data, and the
// oracle self-checks.

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "p3o/backward_sampler.hpp"
#include "p3o/config.hpp"
#include "p3o/enumeration.hpp"
#include "p3o/errors.hpp"
#include "p3o/harness.hpp"
#include "p3o/nested_smc.hpp"
#include "p3o/numeric.hpp"
#include "p3o/tabular_policy.hpp"
#include "p3o/tape_io.hpp"

using namespace p3o;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

// Dotted overrides (--smc.n_history 64, --env.noise_slope=0.5) are not
// declared to CLI11; they are collected from the leftover arguments.
std::vector<std::string> dotted_overrides(std::vector<std::string> rest) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unrecognized argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.push_back(body);
    } else {
      if (i + 1 >= rest.size()) throw ConfigError("option '" + a + "' needs a value");
      out.push_back(body + "=" + rest[++i]);
    }
  }
  return out;
}

ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& sets,
                              const std::vector<std::string>& extra) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : load_config(path);
  apply_overrides(c, sets);
  apply_overrides(c, dotted_overrides(extra));
  c.validate();
  return c;
}

int cmd_train(const ExperimentConfig& c, Algorithm alg) {
  const auto r = train(c, alg);
  const auto& last = r.curve.back();
  std::cout << "final return " << last.mean_return << " +- " << last.stderr_return << " after "
            << last.interactions << " interactions; run directory " << c.output << "\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& c, const std::string& ckpt_path, const std::string& table) {
  const auto ck = load_checkpoint(ckpt_path);
  if (ck.env != c.env)
    throw ConfigError("checkpoint was trained on '" + ck.env + "' but the config names '" + c.env + "'");
  const auto model = make_model(c.env, c.env_params);
  const auto policy = make_policy(ck.policy);
  if (policy->num_params() != ck.params.size()) throw ConfigError("checkpoint parameters do not fit its policy");
  EvalOptions eo;
  eo.rollouts = c.eval_rollouts;
  eo.n_belief = c.eval_belief ? c.eval_belief : c.smc.n_belief;
  eo.deterministic = c.eval_deterministic;
  eo.store = table.empty() ? 0 : c.eval_store;
  eo.seed = c.seed;
  eo.execution = c.smc.execution;
  const auto ev = evaluate(*model, *policy, ck.params, eo);
  std::cout.precision(10);
  std::cout << "mean_return " << ev.mean_return << "\nstderr " << ev.stderr_return << "\nrollouts "
            << ev.returns.size() << "\nbelief_collapses " << ev.belief_collapses << "\n";
  if (!table.empty()) write_trajectory_table(ev, table);
  return 0;
}

int cmd_smooth(const ExperimentConfig& c, const std::string& ckpt_path, const std::string& tape_path,
               std::size_t draws, const std::string& mode, std::uint64_t seed, const std::string& out_path) {
  const auto ck = load_checkpoint(ckpt_path);
  const auto model = make_model(c.env, c.env_params);
  const auto policy = make_policy(ck.policy);
  FilterTape tape = load_tape(tape_path);
  tape.rebuild_policy_states(*policy, ck.params);
  const auto res = backward_sample(tape, *model, *policy, ck.params, draws, parse_backward_mode(mode), seed,
                                   c.smc.execution);
  const auto rep = degeneracy_report(tape, res.draws);
  std::ofstream os(out_path);
  if (!os) throw IoError("cannot write '" + out_path + "'");
  os.precision(10);
  const std::size_t A = model->action_dim(), Z = model->obs_dim();
  os << "draw\tt\tindex";
  for (std::size_t i = 0; i < Z; ++i) os << "\tz" << i;
  for (std::size_t i = 0; i < A; ++i) os << "\ta" << i;
  os << "\n";
  for (std::size_t k = 0; k < res.draws.size(); ++k) {
    const auto& d = res.draws[k];
    for (std::size_t t = 0; t < d.indices.size(); ++t) {
      os << k << '\t' << t << '\t' << d.indices[t];
      for (double z : d.trajectory.observations[t]) os << '\t' << z;
      if (t < d.trajectory.actions.size())
        for (double a : d.trajectory.actions[t]) os << '\t' << a;
      else
        for (std::size_t i = 0; i < A; ++i) os << '\t';
      os << '\n';
    }
  }
  std::cout << "draws " << res.draws.size() << "\nunique_time0_ancestors " << rep.backward_unique.front()
            << "\nlineage_time0_ancestors " << rep.lineage_unique.front() << "\nfallbacks " << res.diagnostics.fallbacks
            << "\n";
  return 0;
}

// Oracle identities that need no training: finite-difference agreement of the
// gradient identity, the soft-value decomposition, and normalizer bias.
int cmd_verify(int runs) {
  const auto oracle = make_oracle_2x2x2(2);
  TabularSoftmaxPolicy pol(2, 2, 2);
  const auto params = pol.initial_params(11);
  bool ok = true;
  auto report = [&](const char* name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
    ok = ok && pass;
  };

  const auto fisher = enumerate_risk_gradient(oracle, pol, params, 1.0);
  const auto fd = finite_difference_risk_gradient(oracle, pol, params, 1.0);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num += (fisher[i] - fd[i]) * (fisher[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  const double rel = std::sqrt(num / den);
  report("gradient-identity", rel <= 1e-8, fmt::format("relative error {:.3e}", rel));

  for (int T : {1, 2}) {
    const auto o = make_oracle_2x2x2(T);
    TabularSoftmaxPolicy p(2, 2, T);
    const auto rc = check_remark_decomposition(o, p, p.initial_params(3), 1.0);
    report(T == 1 ? "soft-value-decomposition-T1" : "soft-value-decomposition-T2", rc.holds,
           fmt::format("max deviation {:.3e}", rc.max_deviation));
  }

  const double exact = std::exp(enumerate_trajectories(oracle, pol, params, 1.0).log_normalizer);
  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < runs; ++r) {
    NestedSmcConfig c;
    c.n_history = 64;
    c.n_belief = 16;
    c.seed = static_cast<std::uint64_t>(r);
    const double z = std::exp(run_nested_filter(oracle, pol, params, c).log_normalizer);
    const double d = z - mean;
    mean += d / (r + 1);
    m2 += d * (z - mean);
  }
  const double se = std::sqrt(m2 / (runs - 1) / runs);
  report("normalizer-unbiased", std::abs(mean - exact) <= 4.0 * se,
         fmt::format("mean {:.6f} exact {:.6f} se {:.6f}", mean, exact, se));
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle POMDP policy optimization"};
  app.require_subcommand(1);
  std::string config_path, checkpoint, tape, table, out_path, mode = "two-ancestor", run_dir;
  std::vector<std::string> sets;
  std::size_t draws = 128;
  std::uint64_t seed = 0;
  int runs = 400;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors on the log");

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("--set", sets, "key=value override (repeatable)");
    sub->allow_extras();
    sub->footer("Any config key can also be given as --<key> <value>, e.g. --smc.n_history 64.");
  };
  auto* tr = app.add_subcommand("train", "Train with particle policy optimization");
  with_config(tr);
  auto* rf = app.add_subcommand("train-reinforce", "Train the REINFORCE baseline on prior rollouts");
  with_config(rf);
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint against the environment");
  with_config(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--table", table, "Write the stored trajectories as a table");
  auto* sm = app.add_subcommand("smooth", "Backward-sample trajectories from a saved filter tape");
  with_config(sm);
  sm->add_option("--checkpoint", checkpoint, "Checkpoint the tape was produced with")->required();
  sm->add_option("--tape", tape, "Tape file")->required();
  sm->add_option("--draws", draws, "Number of draws");
  sm->add_option("--mode", mode, "full or two-ancestor");
  sm->add_option("--seed", seed, "Backward-sampling seed");
  sm->add_option("-o,--out", out_path, "Output table")->required();
  auto* pd = app.add_subcommand("plotdata", "Rebuild curve and trajectory tables of a run directory");
  pd->add_option("run_dir", run_dir, "Run directory")->required();
  auto* vf = app.add_subcommand("verify", "Oracle identity and estimator checks");
  vf->add_option("--runs", runs, "Filter runs for the normalizer check")->check(CLI::Range(2, 1000000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*tr) return cmd_train(build_config(config_path, sets, tr->remaining()), Algorithm::kP3O);
    if (*rf) return cmd_train(build_config(config_path, sets, rf->remaining()), Algorithm::kReinforce);
    if (*ev) return cmd_evaluate(build_config(config_path, sets, ev->remaining()), checkpoint, table);
    if (*sm)
      return cmd_smooth(build_config(config_path, sets, sm->remaining()), checkpoint, tape, draws, mode, seed,
                        out_path);
    if (*pd) {
      emit_plotdata(run_dir);
      std::cout << "wrote " << (std::filesystem::path(run_dir) / "curve.tsv").string() << " and "
                << (std::filesystem::path(run_dir) / "trajectories.tsv").string() << "\n";
      return 0;
    }
    if (*vf) return cmd_verify(runs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
