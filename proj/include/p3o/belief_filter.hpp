#pragma once

#include <cstddef>
#include <vector>

#include "p3o/pomdp.hpp"
#include "p3o/rng.hpp"

namespace p3o {

enum class ResampleScheme { kMultinomial, kSystematic };

const char* to_string(ResampleScheme s);
ResampleScheme parse_resample_scheme(const std::string& s);

/// M weighted state samples approximating p(s_t | z_{0:t}, a_{0:t-1}).
/// States are stored row-major, one row of `dim` entries per particle.
struct BeliefParticles {
  std::size_t dim = 0;
  Vector states;
  Vector log_weights;  // normalized: logsumexp == 0
  double log_norm_increment = 0.0;

  std::size_t size() const { return log_weights.size(); }
  ConstSpan state(std::size_t m) const { return ConstSpan(states).subspan(m * dim, dim); }
  MutSpan state(std::size_t m) { return MutSpan(states).subspan(m * dim, dim); }
};

/// M i.i.d. draws from p(s_0) with weights 1/M.
BeliefParticles init_belief(const PomdpModel& model, std::size_t M, RngStream& rng);

/// One particle per point of the model's finite support, weighted by p(s_0).
/// Propagated with propagate_exact this tracks the belief without error.
/// Throws ConfigError if the model has no finite support.
BeliefParticles init_exact_belief(const PomdpModel& model);

/// s^m <- draw from f(. | s^m, a); weights unchanged. Throws
/// NumericError(kModelDivergence) with the particle index on a non-finite state.
void propagate(BeliefParticles& belief, ConstSpan action, const PomdpModel& model, RngStream& rng);

/// Exact prediction on a fixed support: w'(s') = sum_s w(s) f(s' | s, a).
void propagate_exact(BeliefParticles& belief, ConstSpan action, const PomdpModel& model);

/// w^m <- w^m g(z | s^m), normalized. Records log_norm_increment. Throws
/// NumericError(kBeliefCollapse) when every particle has zero likelihood.
void reweight(BeliefParticles& belief, ConstSpan observation, const PomdpModel& model);

/// sum_m w^m R_t(s^m, a_{t-1}).
double expected_reward(const BeliefParticles& belief, ConstSpan prev_action, int t,
                       const PomdpModel& model);

/// m ~ Categorical(w), then z ~ g(. | s^m).
void sample_predictive_observation(const BeliefParticles& belief, const PomdpModel& model,
                                   RngStream& rng, MutSpan observation);

/// `count` ancestor indices drawn from normalized log-weights.
std::vector<std::size_t> resample_indices(ConstSpan log_weights, std::size_t count, RngStream& rng,
                                          ResampleScheme scheme = ResampleScheme::kMultinomial);

/// Resamples in place and resets weights to 1/M; optionally reports indices.
void resample_belief(BeliefParticles& belief, RngStream& rng,
                     ResampleScheme scheme = ResampleScheme::kMultinomial,
                     std::vector<std::size_t>* indices = nullptr);

/// Effective sample size of the belief weights.
double belief_ess(const BeliefParticles& belief);

/// Weighted mean and full covariance (dim x dim, row-major).
struct BeliefMoments {
  Vector mean;
  Vector covariance;
};
BeliefMoments belief_moments(const BeliefParticles& belief);

/// Largest eigenvalue of the belief covariance.
double belief_max_eigenvalue(const BeliefParticles& belief);

}  // namespace p3o
