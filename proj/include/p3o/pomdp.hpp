#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p3o/rng.hpp"

namespace p3o {

using Vector = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

/// Observation-action history z_{0:T}, a_{0:T-1}.
struct Trajectory {
  std::vector<Vector> observations;
  std::vector<Vector> actions;

  std::size_t horizon() const { return actions.size(); }
  /// observations.size() == actions.size() + 1.
  bool consistent() const { return observations.size() == actions.size() + 1; }
  bool operator==(const Trajectory&) const = default;
};

/// Behavioral contract of a POMDP with explicit densities.
///
/// States, actions and observations are flat real vectors of fixed dimension.
/// All densities are in the log domain. Every method is const and must be safe
/// to call concurrently; randomness only enters through the RngStream argument.
class PomdpModel {
 public:
  virtual ~PomdpModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual int horizon() const = 0;

  virtual void sample_initial(RngStream& rng, MutSpan state) const = 0;
  virtual void transition_sample(ConstSpan state, ConstSpan action, RngStream& rng,
                                 MutSpan next) const = 0;
  virtual double transition_logdensity(ConstSpan next, ConstSpan state, ConstSpan action) const = 0;
  virtual void observation_sample(ConstSpan state, RngStream& rng, MutSpan obs) const = 0;
  virtual double observation_logdensity(ConstSpan obs, ConstSpan state) const = 0;

  /// Transition-based reward R_t(s_t, a_{t-1}); bounded by reward_bound().
  virtual double reward(ConstSpan next_state, ConstSpan prev_action, int t) const = 0;
  virtual double reward_bound() const = 0;

  /// Per-dimension half-range of the action box; actions live in
  /// [-bound, bound]. Empty for discrete-action models.
  virtual Vector action_bound() const { return {}; }

  /// Coefficient rho of the slew-rate penalty -rho * |a_t - a_{t-1}|^2 added to
  /// the training utility. Not part of reward(); evaluation excludes it.
  virtual double slew_penalty() const { return 0.0; }

  /// Enumerated state space for models small enough to track beliefs exactly.
  virtual std::optional<std::vector<Vector>> finite_support() const { return std::nullopt; }
  /// log p(s0); required only by models that expose finite_support().
  virtual double initial_logdensity(ConstSpan state) const;

  /// Number of discrete actions for tabular models; 0 for continuous actions.
  virtual std::size_t discrete_actions() const { return 0; }
  virtual std::size_t discrete_observations() const { return 0; }
};

}  // namespace p3o
