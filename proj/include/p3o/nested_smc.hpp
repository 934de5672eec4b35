#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p3o/belief_filter.hpp"
#include "p3o/parallel.hpp"
#include "p3o/policy.hpp"
#include "p3o/pomdp.hpp"

namespace p3o {

/// When the outer filter resamples history particles.
///   kEveryStep: every step, as in the reference algorithm (default).
///   kEssThreshold: only when ESS < ess_threshold * N.
///   kNever: never; with potentials off this yields i.i.d. prior rollouts.
enum class OuterResampling { kEveryStep, kEssThreshold, kNever };

/// kParticle runs an M-particle bootstrap filter per history particle.
/// kExact replaces it by the exact belief on a finite state support.
enum class InnerFilter { kParticle, kExact };

const char* to_string(OuterResampling m);
OuterResampling parse_outer_resampling(const std::string& s);
const char* to_string(InnerFilter m);
InnerFilter parse_inner_filter(const std::string& s);

struct NestedSmcConfig {
  std::size_t n_history = 128;
  std::size_t n_belief = 32;
  double eta = 1.0;
  ResampleScheme resample = ResampleScheme::kMultinomial;
  OuterResampling outer = OuterResampling::kEveryStep;
  double ess_threshold = 0.5;
  InnerFilter inner = InnerFilter::kParticle;
  /// Potentials exp(eta * ell). Off means the untilted belief-space process.
  bool use_potentials = true;
  /// Adds -rho |a_t - a_{t-1}|^2 (rho = model.slew_penalty()) to ell.
  bool slew_in_utility = true;
  std::uint64_t seed = 0;
  Execution execution = Execution::kParallel;

  /// Throws ConfigError on N = 0, M = 0, eta <= 0 with potentials on, or an
  /// ESS threshold outside (0, 1].
  void validate() const;
};

/// Snapshot of all N history particles at one step t of the filter.
///
/// Entries for particle n at step t describe Theta_t^n: the observation z_t,
/// the action a_{t-1} that led to it, the ancestor index A_{t-1} into step
/// t-1, the inner resampling indices B_{t-1}, and the belief after the step-t
/// reweight. Step 0 has zero actions, identity ancestors and zero utility.
/// Indices are 0-based.
struct TapeStep {
  Vector observations;                        // N x obs_dim
  Vector actions;                             // N x action_dim, a_{t-1}
  Vector log_weights;                         // N, normalized log v_t
  std::vector<std::uint32_t> ancestors;       // N, A_{t-1}^n
  std::vector<std::uint32_t> belief_ancestors;  // N x M, B_{t-1}^{nm}
  Vector belief_states;                       // N x M x state_dim, s_t^{nm}
  Vector belief_log_weights;                  // N x M, log w_t^{nm}
  Vector utilities;                           // N, ell_t (training utility)
  Vector policy_inputs;                       // N x input_dim, policy input at t
  bool resampled = false;                     // outer resampling after step t
};

struct FilterTape {
  std::size_t n_history = 0, n_belief = 0;
  std::size_t state_dim = 0, obs_dim = 0, action_dim = 0, input_dim = 0;
  double eta = 0.0;
  /// Beliefs are exact distributions on a finite support rather than
  /// particle sets; backward sampling is not defined for such tapes.
  bool exact_inner = false;
  std::vector<TapeStep> steps;  // T + 1 entries

  /// Policy state of particle n after consuming input t. Filled by the filter
  /// (or rebuild_policy_states) for backward sampling with recurrent policies;
  /// not serialized.
  std::vector<std::vector<PolicyState>> policy_states;

  int horizon() const { return static_cast<int>(steps.size()) - 1; }

  ConstSpan observation(int t, std::size_t n) const;
  /// a_{t-1} of particle n at step t (t >= 1).
  ConstSpan action_into(int t, std::size_t n) const;
  ConstSpan policy_input(int t, std::size_t n) const;
  /// Belief of particle n at step t after reweighting.
  BeliefParticles belief(int t, std::size_t n) const;
  ConstSpan belief_state(int t, std::size_t n, std::size_t m) const;
  ConstSpan belief_log_weights(int t, std::size_t n) const;

  /// Ancestor at step s <= t of particle n at step t.
  std::size_t ancestor_at(int t, std::size_t n, int s) const;
  /// Trajectory ending at the given particle indices, one per step (0..T).
  Trajectory trajectory(std::span<const std::size_t> indices) const;
  /// Policy inputs along the given per-step indices (t = 0..T-1).
  std::vector<Vector> inputs(std::span<const std::size_t> indices) const;
  /// Per-step indices of the genealogy ending at particle n at step T.
  std::vector<std::size_t> lineage(std::size_t n) const;

  /// Recomputes policy_states by replaying the stored inputs along lineages.
  void rebuild_policy_states(const Policy& policy, ConstSpan params);
};

/// Terminal history particle with its genealogy.
struct HistoryParticle {
  Trajectory trajectory;
  double log_weight = 0.0;           // normalized log v_T
  std::vector<std::size_t> lineage;  // index at each step 0..T
  BeliefParticles belief;            // belief at T
};

struct NestedFilterResult {
  std::vector<HistoryParticle> particles;
  FilterTape tape;
  /// sum_t log sum_n vbar_t^n exp(eta ell_{t+1}^n): estimate of log p(O_{1:T}).
  double log_normalizer = 0.0;
  Vector ess;               // outer ESS after each reweight, t = 1..T
  Vector belief_ess;        // mean inner ESS, t = 0..T
  std::size_t collapsed = 0;    // history particles killed by belief collapse
  std::size_t resamples = 0;    // outer resampling events
  std::uint64_t model_calls = 0;  // simulated state transitions
};

/// Nested filter: an outer Feynman-Kac filter over observation-action
/// histories, each carrying an inner belief filter.
///
/// Per step: resample histories; resample each inner belief; draw a_t from the
/// policy; propagate the belief; draw z_{t+1} from the belief predictive;
/// reweight the belief; ell_{t+1} = sum_m w^m R(s^m, a_t); log v += eta ell.
/// Weights are normalized at the end of each step. A history whose belief
/// collapses gets weight zero; if all do, NumericError(kAllParticlesCollapsed).
///
/// Streams: init per n from (kInit, n), outer resampling from
/// (kOuterResample, t), step body from (kParticleStep, t, n). Results do not
/// depend on config.execution.
NestedFilterResult run_nested_filter(const PomdpModel& model, const Policy& policy, ConstSpan params,
                                     const NestedSmcConfig& config);

/// N independent rollouts of the untilted belief-space process: the same
/// filter with potentials off and no outer resampling. Streams are derived
/// from (kPrior, seed).
NestedFilterResult run_prior_rollouts(const PomdpModel& model, const Policy& policy,
                                      ConstSpan params, NestedSmcConfig config);

/// ell increment of the slew penalty, -rho |a - prev|^2; prev empty means a_{-1}
/// does not exist and the penalty is zero.
double slew_utility(const PomdpModel& model, ConstSpan action, ConstSpan prev_action);

}  // namespace p3o
