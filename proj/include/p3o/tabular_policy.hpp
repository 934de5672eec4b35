#pragma once

#include "p3o/policy.hpp"

namespace p3o {

/// Softmax policy with one logit row per observation-action history.
///
/// A history h_t = (z_{0:t}, a_{0:t-1}) is encoded as a mixed-radix integer:
/// z_0 at t = 0, then (code * A + a_{t-1}) * Z + z_t. Row offsets are
/// cumulative counts Z^{k+1} A^k of histories of shorter length. Actions are
/// one-dimensional vectors holding the action index.
class TabularSoftmaxPolicy final : public Policy {
 public:
  TabularSoftmaxPolicy(std::size_t num_observations, std::size_t num_actions, int horizon);

  std::string descriptor() const override;
  std::size_t num_params() const override { return num_rows_ * num_actions_; }
  std::size_t input_dim() const override { return 2; }
  std::size_t action_dim() const override { return 1; }
  InputMode input_mode() const override { return InputMode::kHistory; }
  bool markov_in_input() const override { return false; }

  /// All-zero logits (the uniform policy) unless seed != 0, in which case
  /// logits are drawn from N(0, 0.5^2).
  Vector initial_params(std::uint64_t seed) const override;
  PolicyState initial_state() const override { return {}; }

  void observe(ConstSpan params, PolicyState& state, ConstSpan input) const override;
  double sample(ConstSpan params, const PolicyState& state, RngStream& rng,
                MutSpan action) const override;
  double log_prob(ConstSpan params, const PolicyState& state, ConstSpan action) const override;
  void mode_action(ConstSpan params, const PolicyState& state, MutSpan action) const override;
  double score(ConstSpan params, std::span<const Vector> inputs, std::span<const Vector> actions,
               std::span<const double> step_weights, MutSpan grad) const override;

  std::size_t num_actions() const { return num_actions_; }
  std::size_t num_observations() const { return num_observations_; }
  int horizon() const { return horizon_; }
  /// First parameter of the logit row for the history in `state`.
  std::size_t row_offset(const PolicyState& state) const;
  /// Action probabilities for the history in `state`.
  Vector probabilities(ConstSpan params, const PolicyState& state) const;

 private:
  std::size_t num_observations_;
  std::size_t num_actions_;
  int horizon_;
  std::vector<std::size_t> offsets_;  // first row of each history length
  std::size_t num_rows_ = 0;
};

}  // namespace p3o
