#pragma once

#include <span>
#include <vector>

#include "p3o/backward_sampler.hpp"
#include "p3o/nested_smc.hpp"
#include "p3o/parallel.hpp"
#include "p3o/policy.hpp"

namespace p3o {

/// One trajectory fed to a gradient estimator.
struct ScoredTrajectory {
  Trajectory trajectory;
  /// Per-step policy inputs (t = 0..T-1). Required for belief-mode policies;
  /// may be empty for history mode.
  std::vector<Vector> inputs;
  /// Unnormalized log weight; -inf drops the sample.
  double log_weight = 0.0;
  /// ell_1..ell_T; only REINFORCE reads them.
  Vector utilities;
};

struct GradientEstimate {
  Vector gradient;
  std::size_t samples = 0;     // samples with nonzero weight
  double ess = 0.0;            // of the normalized sample weights
  Vector score_norms;          // per sample, ||sum_t w_t grad log pi||
  double variance_proxy = 0.0; // weighted mean of ||score_i - gradient||^2
  double mean_log_prob = 0.0;  // weighted mean of sum_t log pi
};

/// Terminal weighted particles as samples (weights log v_T).
std::vector<ScoredTrajectory> samples_from_particles(const NestedFilterResult& result);
/// Backward draws as unweighted samples.
std::vector<ScoredTrajectory> samples_from_draws(const FilterTape& tape, std::span<const SmoothingDraw> draws);

/// Self-normalized estimate sum_i w_i sum_t grad log pi(a_t^i | .) of
/// E_Psi[score], proportional to the gradient of the risk-sensitive objective
/// (the factor 1/eta is absorbed into the step size). With weighted = false
/// every sample counts 1/K. Throws NumericError(kNoSamples) when no sample
/// has positive weight.
GradientEstimate p3o_gradient(const Policy& policy, ConstSpan params,
                              std::span<const ScoredTrajectory> samples, bool weighted = true,
                              Execution exec = Execution::kParallel);

/// REINFORCE with reward-to-go: mean_i sum_t grad log pi(a_t^i) G_t^i,
/// G_t = sum_{k > t} ell_k. With a baseline, G_t is replaced by
/// G_t - mean_i G_t^i. Samples with -inf log weight are dropped; the others
/// count equally.
GradientEstimate reinforce_gradient(const Policy& policy, ConstSpan params,
                                    std::span<const ScoredTrajectory> samples, bool baseline = false,
                                    Execution exec = Execution::kParallel);

}  // namespace p3o
