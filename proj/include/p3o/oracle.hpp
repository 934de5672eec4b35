#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "p3o/pomdp.hpp"

namespace p3o {

/// Probability tables of a small discrete POMDP.
struct OracleTables {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::size_t num_observations = 0;
  int horizon = 1;
  Vector initial;      // p(s0), [s]
  Vector transition;   // f(s' | s, a), [a][s][s']
  Vector observation;  // g(z | s), [s][z]
  Vector reward;       // R(s', a), [a][s']
};

/// Tabular POMDP whose histories can be enumerated exactly.
///
/// States, actions and observations are one-dimensional vectors holding the
/// index as a double. Tables are validated on construction: every probability
/// row must sum to one within 1e-12 and cardinalities must be at most 4 with
/// horizon at most 3 so full enumeration stays cheap.
class DiscreteOraclePomdp final : public PomdpModel {
 public:
  static constexpr std::size_t kMaxCardinality = 4;
  static constexpr int kMaxHorizon = 3;
  static constexpr double kRowSumTolerance = 1e-12;

  explicit DiscreteOraclePomdp(OracleTables tables, std::string name = "oracle");

  /// Parses the structured text format (see README). Throws ConfigError.
  static DiscreteOraclePomdp parse(std::istream& in, std::string name = "oracle");
  static DiscreteOraclePomdp load(const std::filesystem::path& path);
  void write(std::ostream& out) const;

  const OracleTables& tables() const { return tables_; }
  std::size_t num_states() const { return tables_.num_states; }
  std::size_t num_actions() const { return tables_.num_actions; }
  std::size_t num_observations() const { return tables_.num_observations; }

  double p0(std::size_t s) const { return tables_.initial[s]; }
  double f(std::size_t next, std::size_t s, std::size_t a) const {
    return tables_.transition[(a * num_states() + s) * num_states() + next];
  }
  double g(std::size_t z, std::size_t s) const {
    return tables_.observation[s * num_observations() + z];
  }
  double r(std::size_t next, std::size_t a) const { return tables_.reward[a * num_states() + next]; }

  /// Copy with a different horizon.
  DiscreteOraclePomdp with_horizon(int horizon) const;

  std::string name() const override { return name_; }
  std::size_t state_dim() const override { return 1; }
  std::size_t action_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 1; }
  int horizon() const override { return tables_.horizon; }

  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan state, ConstSpan action, RngStream& rng,
                         MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan state, ConstSpan action) const override;
  void observation_sample(ConstSpan state, RngStream& rng, MutSpan obs) const override;
  double observation_logdensity(ConstSpan obs, ConstSpan state) const override;
  double reward(ConstSpan next_state, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return reward_bound_; }

  std::optional<std::vector<Vector>> finite_support() const override;
  double initial_logdensity(ConstSpan state) const override;
  std::size_t discrete_actions() const override { return num_actions(); }
  std::size_t discrete_observations() const override { return num_observations(); }

 private:
  OracleTables tables_;
  std::string name_;
  double reward_bound_ = 0.0;
};

/// The built-in two-state, two-action, two-observation oracle ("oracle-2x2x2").
/// g(z=0|s=0) = 0.8, g(z=0|s=1) = 0.4, uniform prior, mixed rewards.
DiscreteOraclePomdp make_oracle_2x2x2(int horizon = 2);

/// Index held in a one-dimensional discrete vector; throws
/// std::invalid_argument when the value is not an integer in [0, n).
std::size_t discrete_index(ConstSpan v, std::size_t n);

}  // namespace p3o
