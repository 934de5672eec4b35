#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "p3o/pomdp.hpp"
#include "p3o/rng.hpp"

namespace p3o {

/// What a policy consumes at each step.
///   kHistory: (z_t, a_{t-1}) with a_{-1} = 0; the policy keeps its own memory.
///   kBelief:  belief_features(b_t); the policy is Markov in this input.
enum class InputMode { kHistory, kBelief };

const char* to_string(InputMode mode);
InputMode parse_input_mode(const std::string& s);

/// Evaluation state after consuming inputs 0..step. `step` is -1 before the
/// first input. Cheap to copy for tabular policies; neural policies keep their
/// recurrent hidden vectors and the decoded action mean here.
struct PolicyState {
  int step = -1;
  std::uint64_t code = 0;  // history index for tabular policies
  Vector memory;           // stacked recurrent hidden vectors
  Vector output;           // distribution parameters for the next action
};

/// Differentiable stochastic policy with an explicit flat parameter vector.
///
/// Parameters are never stored in the policy object, so one instance can be
/// shared read-only across threads while different parameter vectors are
/// evaluated.
class Policy {
 public:
  virtual ~Policy() = default;

  /// Text descriptor from which make_policy() rebuilds an identical policy.
  virtual std::string descriptor() const = 0;
  virtual std::size_t num_params() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual InputMode input_mode() const = 0;
  /// True when log pi(a_t | .) depends on the step-t input only.
  virtual bool markov_in_input() const = 0;

  virtual Vector initial_params(std::uint64_t seed) const = 0;
  virtual PolicyState initial_state() const = 0;

  /// Consumes the input of the next step.
  virtual void observe(ConstSpan params, PolicyState& state, ConstSpan input) const = 0;
  /// Draws a_t given the state; returns log pi(a_t | .).
  virtual double sample(ConstSpan params, const PolicyState& state, RngStream& rng,
                        MutSpan action) const = 0;
  virtual double log_prob(ConstSpan params, const PolicyState& state, ConstSpan action) const = 0;
  /// Most likely action (the squashed mean for Gaussian policies).
  virtual void mode_action(ConstSpan params, const PolicyState& state, MutSpan action) const = 0;

  /// Returns sum_t log pi(a_t | inputs_{0:t}) and accumulates
  /// sum_t step_weights[t] * grad log pi(a_t | .) into `grad`. An empty
  /// step_weights means all ones. Throws NumericError(kOverflow) with the step
  /// index on a non-finite activation.
  virtual double score(ConstSpan params, std::span<const Vector> inputs,
                       std::span<const Vector> actions, std::span<const double> step_weights,
                       MutSpan grad) const = 0;
};

/// Rebuilds a policy from its descriptor. Throws ConfigError.
std::unique_ptr<Policy> make_policy(const std::string& descriptor);

/// History-mode input (z_t, a_{t-1}); `prev_action` empty means a_{-1} = 0.
Vector history_input(ConstSpan observation, ConstSpan prev_action, std::size_t action_dim);

/// History-mode inputs for every step of a trajectory.
std::vector<Vector> history_inputs(const Trajectory& traj, std::size_t action_dim);

/// Log-probability of the trajectory's actions and its gradient.
/// Belief-mode policies need the per-step features in `inputs`; for history
/// mode pass an empty span and they are rebuilt from the trajectory.
struct ScoreResult {
  double log_prob = 0.0;
  Vector gradient;
};
ScoreResult score_trajectory(const Policy& policy, ConstSpan params, const Trajectory& traj,
                             std::span<const Vector> inputs = {});

/// Gaussian in an unbounded pre-squash space followed by a = bound * tanh(u).
/// A non-positive bound disables squashing for that dimension.
namespace squashed_gaussian {

/// Actions closer than this (relative) to a bound are pulled inside before
/// inverting tanh.
inline constexpr double kBoundInset = 1e-6;

/// Number of times an action had to be pulled inside a bound.
std::uint64_t clamp_count();

double sample(ConstSpan mean, ConstSpan log_std, ConstSpan bound, RngStream& rng, MutSpan action);

/// log density of `action`; when dmean / dlog_std are non-empty, adds
/// `weight` times the derivative with respect to mean and log_std.
double log_prob(ConstSpan mean, ConstSpan log_std, ConstSpan bound, ConstSpan action,
                MutSpan dmean = {}, MutSpan dlog_std = {}, double weight = 1.0);

void mode(ConstSpan mean, ConstSpan bound, MutSpan action);

}  // namespace squashed_gaussian

}  // namespace p3o
