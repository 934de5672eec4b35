#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "p3o/config.hpp"
#include "p3o/optimizer.hpp"
#include "p3o/policy.hpp"
#include "p3o/pomdp.hpp"

namespace p3o {

/// Policy built for a model from the config's policy keys.
std::unique_ptr<Policy> build_policy(const ExperimentConfig& config, const PomdpModel& model);

/// Trained state: enough to rebuild the policy and resume the optimizer.
struct Checkpoint {
  std::string env;
  std::string policy;  // descriptor for make_policy
  std::uint64_t iteration = 0;
  std::uint64_t interactions = 0;
  Vector params;
  OptimizerState optimizer;
};

/// Binary layout: "P3OCKPT1", env and descriptor strings, u64 iteration and
/// interaction count, f64 params, optimizer moments, u64 step/skipped/clipped.
/// save_checkpoint writes to a temporary file and renames it into place, so a
/// failed write leaves the previous checkpoint intact. Throws IoError.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// One evaluation rollout against the true environment.
struct EvalTrajectory {
  std::size_t state_dim = 0, action_dim = 0, obs_dim = 0;
  Vector states;        // (T+1) x S, s_0..s_T
  Vector actions;       // T x A
  Vector observations;  // (T+1) x Z
  Vector belief_mean;   // (T+1) x S, after each reweight
  Vector belief_max_eig;  // T+1
  Vector rewards;       // T, R_1..R_T without slew
  double total = 0.0;

  std::size_t horizon() const { return rewards.size(); }
  ConstSpan state(std::size_t t) const { return ConstSpan(states).subspan(t * state_dim, state_dim); }
};

struct EvalResult {
  double mean_return = 0.0;
  double stderr_return = 0.0;
  Vector returns;
  std::vector<EvalTrajectory> trajectories;  // first `store` rollouts
  std::size_t belief_collapses = 0;          // observations every belief particle rejected
};

struct EvalOptions {
  int rollouts = 1024;
  std::size_t n_belief = 32;
  bool deterministic = false;  // mode actions instead of samples
  int store = 0;
  std::uint64_t seed = 0;
  Execution execution = Execution::kParallel;
};

/// Rolls the policy out against the state-space process. Rollout r uses the
/// stream (kEvaluation, r) of options.seed, so results do not depend on the
/// thread count. A belief filter runs online with every policy; belief-mode
/// policies read its features, other policies ignore it. When every belief
/// particle rejects an observation the reweight is skipped and counted.
EvalResult evaluate(const PomdpModel& model, const Policy& policy, ConstSpan params,
                    const EvalOptions& options);

/// Deterministic belief-mode controller: steps toward `goal` from the belief
/// mean, clipped to the action box. Used as the straight-line reference.
class GoalSeekingPolicy final : public Policy {
 public:
  GoalSeekingPolicy(std::size_t state_dim, Vector goal, Vector bound);

  std::string descriptor() const override;
  std::size_t num_params() const override { return 0; }
  std::size_t input_dim() const override;
  std::size_t action_dim() const override { return goal_.size(); }
  InputMode input_mode() const override { return InputMode::kBelief; }
  bool markov_in_input() const override { return true; }
  Vector initial_params(std::uint64_t) const override { return {}; }
  PolicyState initial_state() const override { return {}; }
  void observe(ConstSpan params, PolicyState& state, ConstSpan input) const override;
  double sample(ConstSpan params, const PolicyState& state, RngStream& rng, MutSpan action) const override;
  double log_prob(ConstSpan params, const PolicyState& state, ConstSpan action) const override;
  void mode_action(ConstSpan params, const PolicyState& state, MutSpan action) const override;
  double score(ConstSpan params, std::span<const Vector> inputs, std::span<const Vector> actions,
               std::span<const double> step_weights, MutSpan grad) const override;

 private:
  std::size_t state_dim_;
  Vector goal_, bound_;
};

/// One row of the learning curve.
struct CurvePoint {
  int iteration = 0;
  std::uint64_t interactions = 0;
  double mean_return = 0.0;
  double stderr_return = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<CurvePoint> curve;
  EvalResult final_eval;
};

enum class Algorithm { kP3O, kReinforce };

/// Algorithm 1 for P3O, or the same loop over prior rollouts with the
/// REINFORCE estimator. Each iteration runs one filter (N histories), then
/// applies `updates_per_run` mini-batch updates of `minibatch` samples: draws
/// from the final history weights, backward-sampled trajectories, or, for
/// REINFORCE, consecutive prior rollouts. Evaluates at iteration 0, every
/// eval.every iterations and at the end.
///
/// When config.output is non-empty the run directory receives config.txt,
/// events.jsonl (one JSON object per line), checkpoint_latest.bin,
/// checkpoint_best.bin, trajectories.tsv, curve.tsv and, with
/// train.save_tape, tape.bin of the last filter run with
/// tape_checkpoint.bin holding the parameters that produced it. Three consecutive runs in
/// which every history collapses abort with NumericError.
TrainResult train(const ExperimentConfig& config, Algorithm algorithm,
                  const std::function<void(const CurvePoint&)>& on_eval = {});

/// Same loop against a caller-supplied model; config.env only labels the run.
TrainResult train(const ExperimentConfig& config, Algorithm algorithm, const PomdpModel& model,
                  const std::function<void(const CurvePoint&)>& on_eval = {});

/// Rebuilds curve.tsv and trajectories.tsv from events.jsonl and
/// eval_trajectories.jsonl in `run_dir`. Throws IoError listing the expected
/// paths when the run files are missing.
void emit_plotdata(const std::string& run_dir);

/// Writes the trajectory table of an evaluation as tab-separated text.
void write_trajectory_table(const EvalResult& eval, const std::string& path);

}  // namespace p3o
