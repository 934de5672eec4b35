#include "p3o/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "p3o/backward_sampler.hpp"
#include "p3o/binary_io.hpp"
#include "p3o/errors.hpp"
#include "p3o/gradient.hpp"
#include "p3o/nested_smc.hpp"
#include "p3o/neural_policy.hpp"
#include "p3o/numeric.hpp"
#include "p3o/parallel.hpp"
#include "p3o/tabular_policy.hpp"
#include "p3o/tape_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace p3o {

std::unique_ptr<Policy> build_policy(const ExperimentConfig& config, const PomdpModel& model) {
  if (config.policy == "tabular") {
    if (model.discrete_actions() == 0 || model.discrete_observations() == 0)
      throw ConfigError("tabular policy needs a model with discrete observations and actions");
    return std::make_unique<TabularSoftmaxPolicy>(model.discrete_observations(), model.discrete_actions(),
                                                  model.horizon());
  }
  if (model.discrete_actions() != 0) throw ConfigError("neural policies need continuous actions");
  const InputMode mode = parse_input_mode(config.policy);
  const std::size_t in = mode == InputMode::kBelief ? belief_feature_dim(model.state_dim())
                                                    : model.obs_dim() + model.action_dim();
  auto arch = NeuralArchitecture::defaults(mode, in, model.action_dim(), model.action_bound());
  if (mode == InputMode::kHistory) {
    arch.encoder = config.encoder;
    arch.recurrent = config.recurrent;
    arch.post = config.post;
  }
  arch.decoder = config.decoder;
  if (config.init_log_std_set) arch.init_log_std = config.init_log_std;
  return std::make_unique<NeuralPolicy>(arch);
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr char kCheckpointMagic[] = "P3OCKPT1";

void put_vector(std::ostream& os, const Vector& v) {
  binary::put_u64(os, v.size());
  for (double x : v) binary::put_f64(os, x);
}

Vector get_vector(std::istream& is) {
  const std::uint64_t n = binary::get_u64(is);
  if (n > (std::uint64_t{1} << 32)) throw ConfigError("checkpoint vector length is implausible");
  Vector v(n);
  for (auto& x : v) x = binary::get_f64(is);
  return v;
}

// Write to a sibling temporary and rename, so readers never see a partial file.
template <class Writer>
void write_atomically(const std::string& path, Writer&& writer, bool binary_mode) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, binary_mode ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    writer(os);
    os.flush();
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}
}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_atomically(
      path,
      [&](std::ostream& os) {
        binary::put_magic(os, kCheckpointMagic);
        binary::put_string(os, c.env);
        binary::put_string(os, c.policy);
        binary::put_u64(os, c.iteration);
        binary::put_u64(os, c.interactions);
        put_vector(os, c.params);
        put_vector(os, c.optimizer.m);
        put_vector(os, c.optimizer.v);
        binary::put_u64(os, c.optimizer.step);
        binary::put_u64(os, c.optimizer.skipped);
        binary::put_u64(os, c.optimizer.clipped);
      },
      true);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  Checkpoint c;
  binary::expect_magic(is, kCheckpointMagic);
  c.env = binary::get_string(is);
  c.policy = binary::get_string(is);
  c.iteration = binary::get_u64(is);
  c.interactions = binary::get_u64(is);
  c.params = get_vector(is);
  c.optimizer.m = get_vector(is);
  c.optimizer.v = get_vector(is);
  c.optimizer.step = binary::get_u64(is);
  c.optimizer.skipped = binary::get_u64(is);
  c.optimizer.clipped = binary::get_u64(is);
  if (!is) throw IoError("checkpoint '" + path + "' is truncated");
  return c;
}

// ---------------------------------------------------------------- evaluation

namespace {

void append(Vector& dst, ConstSpan src) { dst.insert(dst.end(), src.begin(), src.end()); }

// Reweight that keeps the predicted belief when every particle rejects z.
bool reweight_or_keep(BeliefParticles& b, ConstSpan z, const PomdpModel& model) {
  const Vector saved = b.log_weights;
  try {
    reweight(b, z, model);
    return true;
  } catch (const NumericError& e) {
    if (e.kind() != NumericError::Kind::kBeliefCollapse) throw;
    b.log_weights = saved;
    return false;
  }
}

}  // namespace

EvalResult evaluate(const PomdpModel& model, const Policy& policy, ConstSpan params,
                    const EvalOptions& opt) {
  if (opt.rollouts < 1) throw ConfigError("evaluation needs at least one rollout");
  if (opt.n_belief == 0) throw ConfigError("evaluation belief size must be positive");
  if (policy.action_dim() != model.action_dim() && model.discrete_actions() == 0)
    throw ConfigError("policy action dimension does not match the model");
  const std::size_t R = static_cast<std::size_t>(opt.rollouts);
  const std::size_t S = model.state_dim(), A = model.action_dim(), Z = model.obs_dim();
  const int T = model.horizon();
  std::vector<EvalTrajectory> trajs(R);
  std::vector<std::size_t> collapses(R, 0);

  for_each_index(R, opt.execution, [&](std::size_t r) {
    RngStream rng = derive_stream(opt.seed, StreamTag::kEvaluation, r);
    EvalTrajectory& tr = trajs[r];
    tr.state_dim = S;
    tr.action_dim = A;
    tr.obs_dim = Z;
    Vector s(S), next(S), z(Z), a(A);
    model.sample_initial(rng, s);
    model.observation_sample(s, rng, z);
    BeliefParticles b = init_belief(model, opt.n_belief, rng);
    collapses[r] += !reweight_or_keep(b, z, model);
    auto record = [&] {
      append(tr.states, s);
      append(tr.observations, z);
      append(tr.belief_mean, belief_moments(b).mean);
      tr.belief_max_eig.push_back(belief_max_eigenvalue(b));
    };
    record();
    auto input = [&](ConstSpan prev) {
      return policy.input_mode() == InputMode::kBelief ? belief_features(b) : history_input(z, prev, A);
    };
    PolicyState ps = policy.initial_state();
    policy.observe(params, ps, input({}));
    for (int t = 0; t < T; ++t) {
      if (opt.deterministic)
        policy.mode_action(params, ps, a);
      else
        policy.sample(params, ps, rng, a);
      model.transition_sample(s, a, rng, next);
      s = next;
      const double rew = model.reward(s, a, t + 1);
      tr.rewards.push_back(rew);
      tr.total += rew;
      append(tr.actions, a);
      model.observation_sample(s, rng, z);
      resample_belief(b, rng);
      propagate(b, a, model, rng);
      collapses[r] += !reweight_or_keep(b, z, model);
      record();
      if (t + 1 < T) policy.observe(params, ps, input(a));
    }
  });

  EvalResult res;
  res.returns.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    res.returns[r] = trajs[r].total;
    res.belief_collapses += collapses[r];
  }
  for (double x : res.returns) res.mean_return += x / static_cast<double>(R);
  if (R > 1) {
    double ss = 0.0;
    for (double x : res.returns) ss += (x - res.mean_return) * (x - res.mean_return);
    res.stderr_return = std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R));
  }
  const std::size_t keep = std::min<std::size_t>(R, static_cast<std::size_t>(std::max(opt.store, 0)));
  trajs.resize(keep);
  res.trajectories = std::move(trajs);
  return res;
}

// ---------------------------------------------------------------- goal seeking

GoalSeekingPolicy::GoalSeekingPolicy(std::size_t state_dim, Vector goal, Vector bound)
    : state_dim_(state_dim), goal_(std::move(goal)), bound_(std::move(bound)) {
  if (goal_.size() > state_dim_) throw ConfigError("goal has more entries than the state");
  bound_.resize(goal_.size(), 0.0);
}

std::string GoalSeekingPolicy::descriptor() const { return "goal-seeking"; }

std::size_t GoalSeekingPolicy::input_dim() const { return belief_feature_dim(state_dim_); }

void GoalSeekingPolicy::observe(ConstSpan, PolicyState& state, ConstSpan input) const {
  if (input.size() != input_dim()) throw ConfigError("goal-seeking policy got a wrong-sized input");
  ++state.step;
  state.output.resize(goal_.size());
  for (std::size_t i = 0; i < goal_.size(); ++i) {
    double d = goal_[i] - input[i];
    if (bound_[i] > 0.0) d = std::clamp(d, -bound_[i], bound_[i]);
    state.output[i] = d;
  }
}

double GoalSeekingPolicy::sample(ConstSpan params, const PolicyState& state, RngStream&,
                                 MutSpan action) const {
  mode_action(params, state, action);
  return 0.0;
}

double GoalSeekingPolicy::log_prob(ConstSpan, const PolicyState& state, ConstSpan action) const {
  for (std::size_t i = 0; i < action.size(); ++i)
    if (action[i] != state.output[i]) return kNegInf;
  return 0.0;
}

void GoalSeekingPolicy::mode_action(ConstSpan, const PolicyState& state, MutSpan action) const {
  std::copy(state.output.begin(), state.output.end(), action.begin());
}

double GoalSeekingPolicy::score(ConstSpan, std::span<const Vector>, std::span<const Vector>,
                                std::span<const double>, MutSpan) const {
  return 0.0;
}

// ---------------------------------------------------------------- run files

namespace {

json trajectory_json(const EvalTrajectory& t) {
  return json{{"state_dim", t.state_dim},     {"action_dim", t.action_dim},
              {"obs_dim", t.obs_dim},         {"states", t.states},
              {"actions", t.actions},         {"observations", t.observations},
              {"belief_mean", t.belief_mean}, {"belief_max_eig", t.belief_max_eig},
              {"rewards", t.rewards},         {"total", t.total}};
}

EvalTrajectory trajectory_from_json(const json& j) {
  EvalTrajectory t;
  t.state_dim = j.at("state_dim");
  t.action_dim = j.at("action_dim");
  t.obs_dim = j.at("obs_dim");
  t.states = j.at("states").get<Vector>();
  t.actions = j.at("actions").get<Vector>();
  t.observations = j.at("observations").get<Vector>();
  t.belief_mean = j.at("belief_mean").get<Vector>();
  t.belief_max_eig = j.at("belief_max_eig").get<Vector>();
  t.rewards = j.at("rewards").get<Vector>();
  t.total = j.at("total");
  return t;
}

std::string fmt_num(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

void write_curve_table(const std::vector<CurvePoint>& curve, const std::string& path) {
  write_atomically(
      path,
      [&](std::ostream& os) {
        os << "iteration\tinteractions\tmean_return\tstderr\twall_seconds\n";
        for (const auto& c : curve)
          os << c.iteration << '\t' << c.interactions << '\t' << fmt_num(c.mean_return) << '\t'
             << fmt_num(c.stderr_return) << '\t' << fmt_num(c.wall_seconds) << '\n';
      },
      false);
}

class EventLog {
 public:
  explicit EventLog(const std::string& path) : os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot open event log '" + path + "'");
  }
  void write(const json& j) {
    os_ << j.dump() << '\n';
    os_.flush();
    if (!os_) throw IoError("event log write failed");
  }

 private:
  std::ofstream os_;
};

}  // namespace

void write_trajectory_table(const EvalResult& eval, const std::string& path) {
  write_atomically(
      path,
      [&](std::ostream& os) {
        std::size_t S = 0, A = 0, Z = 0;
        if (!eval.trajectories.empty()) {
          S = eval.trajectories[0].state_dim;
          A = eval.trajectories[0].action_dim;
          Z = eval.trajectories[0].obs_dim;
        }
        os << "rollout\tt";
        for (std::size_t i = 0; i < S; ++i) os << "\ts" << i;
        for (std::size_t i = 0; i < A; ++i) os << "\ta" << i;
        for (std::size_t i = 0; i < Z; ++i) os << "\tz" << i;
        for (std::size_t i = 0; i < S; ++i) os << "\tbelief_mean" << i;
        os << "\tbelief_max_eig\treward\n";
        for (std::size_t r = 0; r < eval.trajectories.size(); ++r) {
          const auto& tr = eval.trajectories[r];
          const std::size_t T = tr.horizon();
          for (std::size_t t = 0; t <= T; ++t) {
            os << r << '\t' << t;
            for (std::size_t i = 0; i < S; ++i) os << '\t' << fmt_num(tr.states[t * S + i]);
            // a_t and R_{t+1} belong to the transition leaving step t.
            for (std::size_t i = 0; i < A; ++i) os << '\t' << (t < T ? fmt_num(tr.actions[t * A + i]) : "");
            for (std::size_t i = 0; i < Z; ++i) os << '\t' << fmt_num(tr.observations[t * Z + i]);
            for (std::size_t i = 0; i < S; ++i) os << '\t' << fmt_num(tr.belief_mean[t * S + i]);
            os << '\t' << fmt_num(tr.belief_max_eig[t]) << '\t' << (t < T ? fmt_num(tr.rewards[t]) : "") << '\n';
          }
        }
      },
      false);
}

void emit_plotdata(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path events = dir / "events.jsonl", trajs = dir / "eval_trajectories.jsonl";
  std::vector<std::string> missing;
  for (const auto& p : {events, trajs})
    if (!fs::exists(p)) missing.push_back(p.string());
  if (!missing.empty()) {
    std::string msg = "run directory '" + run_dir + "' is incomplete; expected:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  std::vector<CurvePoint> curve;
  {
    std::ifstream is(events);
    for (std::string line; std::getline(is, line);) {
      if (line.empty()) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw IoError("malformed line in " + events.string());
      if (j.value("event", "") != "eval") continue;
      CurvePoint c;
      c.iteration = j.at("iteration");
      c.interactions = j.at("interactions");
      c.mean_return = j.at("mean_return");
      c.stderr_return = j.at("stderr");
      c.wall_seconds = j.at("wall_seconds");
      curve.push_back(c);
    }
  }
  EvalResult eval;
  {
    std::ifstream is(trajs);
    for (std::string line; std::getline(is, line);) {
      if (line.empty()) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw IoError("malformed line in " + trajs.string());
      eval.trajectories.push_back(trajectory_from_json(j));
    }
  }
  write_curve_table(curve, (dir / "curve.tsv").string());
  write_trajectory_table(eval, (dir / "trajectories.tsv").string());
}

// ---------------------------------------------------------------- training

namespace {

constexpr int kMaxConsecutiveCollapses = 3;

std::vector<ScoredTrajectory> pick(const std::vector<ScoredTrajectory>& all, std::span<const std::size_t> idx) {
  std::vector<ScoredTrajectory> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, Algorithm algorithm,
                  const std::function<void(const CurvePoint&)>& on_eval) {
  config.validate();
  const auto model = make_model(config.env, config.env_params);
  return train(config, algorithm, *model, on_eval);
}

TrainResult train(const ExperimentConfig& config, Algorithm algorithm, const PomdpModel& env,
                  const std::function<void(const CurvePoint&)>& on_eval) {
  config.validate();
  const PomdpModel* model = &env;
  const auto policy = build_policy(config, *model);
  const auto t_start = std::chrono::steady_clock::now();

  const bool persist = !config.output.empty();
  const fs::path dir(config.output);
  std::unique_ptr<EventLog> log;
  if (persist) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory '" + config.output + "': " + ec.message());
    write_atomically((dir / "config.txt").string(), [&](std::ostream& os) { os << config.to_text(); }, false);
    log = std::make_unique<EventLog>((dir / "events.jsonl").string());
    log->write({{"event", "start"},
                {"algorithm", algorithm == Algorithm::kP3O ? "p3o" : "reinforce"},
                {"policy", policy->descriptor()},
                {"num_params", policy->num_params()}});
  }

  TrainResult out;
  Checkpoint& ck = out.checkpoint;
  ck.env = config.env;
  ck.policy = policy->descriptor();
  ck.params = policy->initial_params(derive_stream(config.seed, StreamTag::kParams).next_u64());
  double best = -std::numeric_limits<double>::infinity();

  EvalOptions eo;
  eo.rollouts = config.eval_rollouts;
  eo.n_belief = config.eval_belief ? config.eval_belief : config.smc.n_belief;
  eo.deterministic = config.eval_deterministic;
  eo.store = config.eval_store;
  eo.seed = config.seed;
  eo.execution = config.smc.execution;

  auto run_eval = [&](int it) {
    EvalResult ev = evaluate(*model, *policy, ck.params, eo);
    CurvePoint c;
    c.iteration = it;
    c.interactions = ck.interactions;
    c.mean_return = ev.mean_return;
    c.stderr_return = ev.stderr_return;
    c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    out.curve.push_back(c);
    spdlog::info("iteration {} interactions {} return {:.4f} +- {:.4f}", it, c.interactions, c.mean_return,
                 c.stderr_return);
    if (persist) {
      log->write({{"event", "eval"},
                  {"iteration", it},
                  {"interactions", c.interactions},
                  {"mean_return", c.mean_return},
                  {"stderr", c.stderr_return},
                  {"belief_collapses", ev.belief_collapses},
                  {"wall_seconds", c.wall_seconds}});
      write_atomically(
          (dir / "eval_trajectories.jsonl").string(),
          [&](std::ostream& os) {
            for (const auto& t : ev.trajectories) os << trajectory_json(t).dump() << '\n';
          },
          false);
      save_checkpoint(ck, (dir / "checkpoint_latest.bin").string());
      if (c.mean_return > best) save_checkpoint(ck, (dir / "checkpoint_best.bin").string());
      emit_plotdata(config.output);
    }
    best = std::max(best, c.mean_return);
    if (on_eval) on_eval(c);
    out.final_eval = std::move(ev);
  };

  const std::size_t U = static_cast<std::size_t>(config.updates_per_run);
  const std::size_t B = static_cast<std::size_t>(config.minibatch);
  int consecutive_collapses = 0;
  for (int it = 0; it < config.iterations; ++it) {
    if (it % config.eval_every == 0) run_eval(it);
    NestedSmcConfig smc = config.smc;
    smc.seed = derive_stream(config.seed, StreamTag::kMinibatch, static_cast<std::uint64_t>(it), 0).next_u64();
    NestedFilterResult res;
    try {
      res = algorithm == Algorithm::kP3O ? run_nested_filter(*model, *policy, ck.params, smc)
                                         : run_prior_rollouts(*model, *policy, ck.params, smc);
      consecutive_collapses = 0;
    } catch (const NumericError& e) {
      if (e.kind() != NumericError::Kind::kAllParticlesCollapsed) throw;
      ++consecutive_collapses;
      spdlog::warn("iteration {}: {}", it, e.what());
      if (persist) log->write({{"event", "collapse"}, {"iteration", it}, {"message", e.what()}});
      if (consecutive_collapses >= kMaxConsecutiveCollapses)
        throw NumericError(NumericError::Kind::kAllParticlesCollapsed,
                           "every history particle collapsed in " + std::to_string(kMaxConsecutiveCollapses) +
                               " consecutive runs (last at iteration " + std::to_string(it) + ": " + e.what() +
                               "); check observation noise and particle counts",
                           it);
      continue;
    }
    ck.interactions += res.model_calls;
    if (persist && config.save_tape) {
      // The tape is only meaningful with the parameters that produced it.
      save_tape((dir / "tape.bin").string(), res.tape);
      save_checkpoint(ck, (dir / "tape_checkpoint.bin").string());
    }

    std::vector<ScoredTrajectory> samples;
    std::vector<std::vector<std::size_t>> batches(U);
    RngStream mb = derive_stream(config.seed, StreamTag::kMinibatch, static_cast<std::uint64_t>(it), 1);
    if (algorithm == Algorithm::kP3O && config.uses_backward()) {
      const std::uint64_t bseed =
          derive_stream(config.seed, StreamTag::kMinibatch, static_cast<std::uint64_t>(it), 2).next_u64();
      const auto bs = backward_sample(res.tape, *model, *policy, ck.params, U * B, config.backward_mode(), bseed,
                                      config.smc.execution);
      samples = samples_from_draws(res.tape, bs.draws);
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t i = 0; i < B; ++i) batches[u].push_back(u * B + i);
    } else if (algorithm == Algorithm::kP3O) {
      samples = samples_from_particles(res);
      Vector lw(samples.size());
      for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = samples[i].log_weight;
      for (std::size_t u = 0; u < U; ++u) batches[u] = resample_indices(lw, B, mb, config.smc.resample);
    } else {
      samples = samples_from_particles(res);
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t i = 0; i < B; ++i) batches[u].push_back((u * B + i) % samples.size());
    }

    double grad_norm = 0.0;
    std::size_t applied = 0;
    for (std::size_t u = 0; u < U; ++u) {
      const auto batch = pick(samples, batches[u]);
      GradientEstimate g;
      try {
        g = algorithm == Algorithm::kP3O
                ? p3o_gradient(*policy, ck.params, batch, false, config.smc.execution)
                : reinforce_gradient(*policy, ck.params, batch, config.reinforce_baseline, config.smc.execution);
      } catch (const NumericError& e) {
        if (e.kind() != NumericError::Kind::kNoSamples) throw;
        continue;  // a REINFORCE batch made only of collapsed rollouts
      }
      const UpdateInfo info = apply_update(ck.params, g.gradient, ck.optimizer, config.optimizer);
      grad_norm += info.grad_norm;
      applied += info.applied;
    }
    ck.iteration = static_cast<std::uint64_t>(it + 1);
    if (persist) {
      double min_ess = static_cast<double>(config.smc.n_history);
      for (double e : res.ess) min_ess = std::min(min_ess, e);
      log->write({{"event", "run"},
                  {"iteration", it},
                  {"interactions", ck.interactions},
                  {"log_normalizer", res.log_normalizer},
                  {"min_ess", min_ess},
                  {"collapsed", res.collapsed},
                  {"resamples", res.resamples},
                  {"updates_applied", applied},
                  {"mean_grad_norm", grad_norm / static_cast<double>(U)},
                  {"skipped_total", ck.optimizer.skipped}});
    }
  }
  run_eval(config.iterations);
  if (persist) log->write({{"event", "done"}, {"iteration", config.iterations}, {"best_return", best}});
  return out;
}

}  // namespace p3o
