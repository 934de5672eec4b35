#pragma once

#include <string>
#include <vector>

#include "p3o/belief_filter.hpp"
#include "p3o/policy.hpp"

namespace p3o {

/// Layer sizes of a neural Gaussian policy.
///
/// input -> encoder dense stack (ReLU on all but the last layer, LayerNorm
/// after every layer) -> stacked GRU cells -> linear post layer -> decoder
/// dense stack (ReLU) -> linear output giving the pre-squash action mean.
/// Empty stacks and post = 0 drop the corresponding stage. The log standard
/// deviation is a separate input-independent parameter per action dimension.
struct NeuralArchitecture {
  InputMode mode = InputMode::kHistory;
  std::size_t input_dim = 0;
  std::size_t action_dim = 0;
  std::vector<std::size_t> encoder{256, 256, 128};
  std::vector<std::size_t> recurrent{128, 128};
  std::size_t post = 128;
  std::vector<std::size_t> decoder{256, 256};
  Vector action_bound;  // per dimension; non-positive means unsquashed
  double init_log_std = 0.0;

  /// History mode: the full encoder/GRU stack. Belief mode: the decoder
  /// applied directly to belief features. init_log_std = log(bound).
  static NeuralArchitecture defaults(InputMode mode, std::size_t input_dim, std::size_t action_dim,
                                     Vector action_bound);

  std::string to_string() const;
  /// Parses to_string() output (the part after the leading "neural").
  static NeuralArchitecture parse(const std::string& text);
};

class NeuralPolicy final : public Policy {
 public:
  explicit NeuralPolicy(NeuralArchitecture arch);

  std::string descriptor() const override { return arch_.to_string(); }
  std::size_t num_params() const override { return num_params_; }
  std::size_t input_dim() const override { return arch_.input_dim; }
  std::size_t action_dim() const override { return arch_.action_dim; }
  InputMode input_mode() const override { return arch_.mode; }
  bool markov_in_input() const override { return arch_.recurrent.empty(); }
  const NeuralArchitecture& architecture() const { return arch_; }

  Vector initial_params(std::uint64_t seed) const override;
  PolicyState initial_state() const override;
  void observe(ConstSpan params, PolicyState& state, ConstSpan input) const override;
  double sample(ConstSpan params, const PolicyState& state, RngStream& rng,
                MutSpan action) const override;
  double log_prob(ConstSpan params, const PolicyState& state, ConstSpan action) const override;
  void mode_action(ConstSpan params, const PolicyState& state, MutSpan action) const override;
  double score(ConstSpan params, std::span<const Vector> inputs, std::span<const Vector> actions,
               std::span<const double> step_weights, MutSpan grad) const override;

  /// Offset of the log-std block inside the parameter vector.
  std::size_t log_std_offset() const { return log_std_; }

  struct StepCache;

 private:
  struct Dense {
    std::size_t w, b, in, out;
  };
  struct Norm {
    std::size_t gamma, beta;
  };
  struct Gru {
    std::size_t w_ih, w_hh, b_ih, b_hh, in, hidden;
  };

  void forward(const double* p, ConstSpan input, const double* h_prev, StepCache& c) const;
  void backward(const double* p, const StepCache& c, const double* dmean, double* dh_carry,
                double* g) const;

  NeuralArchitecture arch_;
  std::vector<Dense> enc_;
  std::vector<Norm> norm_;
  std::vector<Gru> gru_;
  std::vector<Dense> post_;  // zero or one layer
  std::vector<Dense> dec_;   // hidden layers followed by the output layer
  std::size_t log_std_ = 0;
  std::size_t num_params_ = 0;
  std::size_t memory_size_ = 0;
};

/// Number of belief features for a state of dimension d.
std::size_t belief_feature_dim(std::size_t state_dim);

/// Weighted mean, flattened upper triangle of the weighted covariance, and
/// log effective sample size. Particles are summed in a canonical order
/// (sorted by state, then weight) so any permutation gives identical bits.
Vector belief_features(const BeliefParticles& belief);

}  // namespace p3o
