#include "p3o/gradient.hpp"

#include <cmath>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

std::vector<ScoredTrajectory> samples_from_particles(const NestedFilterResult& result) {
  std::vector<ScoredTrajectory> out(result.particles.size());
  const int T = result.tape.horizon();
  for (std::size_t n = 0; n < out.size(); ++n) {
    const auto& hp = result.particles[n];
    out[n].trajectory = hp.trajectory;
    out[n].inputs = result.tape.inputs(hp.lineage);
    out[n].log_weight = hp.log_weight;
    for (int t = 1; t <= T; ++t) out[n].utilities.push_back(result.tape.steps[t].utilities[hp.lineage[t]]);
  }
  return out;
}

std::vector<ScoredTrajectory> samples_from_draws(const FilterTape& tape, std::span<const SmoothingDraw> draws) {
  std::vector<ScoredTrajectory> out(draws.size());
  for (std::size_t k = 0; k < draws.size(); ++k) {
    out[k].trajectory = draws[k].trajectory;
    out[k].inputs = draws[k].inputs;
    for (int t = 1; t <= tape.horizon(); ++t)
      out[k].utilities.push_back(tape.steps[t].utilities[draws[k].indices[t]]);
  }
  return out;
}

namespace {

// Samples are reduced in fixed chunks, each summed in index order, and the
// chunk sums are added in chunk order: the result does not depend on threads.
constexpr std::size_t kChunk = 32;

struct Accumulated {
  Vector sum;
  double sq_norm = 0.0;   // sum_i w_i ||s_i||^2
  double log_prob = 0.0;  // sum_i w_i log pi_i
};

template <class StepWeights>
GradientEstimate estimate(const Policy& policy, ConstSpan params, std::span<const ScoredTrajectory> samples,
                          const Vector& weights, StepWeights&& step_weights, Execution exec) {
  const std::size_t P = policy.num_params();
  const std::size_t K = samples.size();
  const std::size_t chunks = (K + kChunk - 1) / kChunk;
  std::vector<Accumulated> acc(chunks);
  GradientEstimate est;
  est.score_norms.assign(K, 0.0);
  for_each_index(chunks, exec, [&](std::size_t c) {
    Accumulated& a = acc[c];
    a.sum.assign(P, 0.0);
    Vector g(P), sw;
    std::vector<Vector> built;
    for (std::size_t i = c * kChunk; i < std::min(K, (c + 1) * kChunk); ++i) {
      if (weights[i] == 0.0) continue;
      const auto& s = samples[i];
      std::span<const Vector> inputs = s.inputs;
      if (inputs.empty()) {
        if (policy.input_mode() == InputMode::kBelief)
          throw ConfigError("belief-mode policy needs per-step inputs to score a trajectory");
        built = history_inputs(s.trajectory, policy.action_dim());
        inputs = built;
      }
      std::fill(g.begin(), g.end(), 0.0);
      step_weights(i, sw);
      const std::size_t T = s.trajectory.actions.size();
      const double lp = policy.score(params, inputs.first(T), s.trajectory.actions, sw, g);
      double n2 = 0.0;
      for (std::size_t p = 0; p < P; ++p) {
        a.sum[p] += weights[i] * g[p];
        n2 += g[p] * g[p];
      }
      est.score_norms[i] = std::sqrt(n2);
      a.sq_norm += weights[i] * n2;
      a.log_prob += weights[i] * lp;
    }
  });
  est.gradient.assign(P, 0.0);
  double sq = 0.0;
  for (const auto& a : acc) {
    for (std::size_t p = 0; p < P; ++p) est.gradient[p] += a.sum[p];
    sq += a.sq_norm;
    est.mean_log_prob += a.log_prob;
  }
  double g2 = 0.0;
  for (double x : est.gradient) g2 += x * x;
  est.variance_proxy = std::max(0.0, sq - g2);
  est.ess = effective_sample_size(weights);
  for (double w : weights) est.samples += w > 0.0 ? 1 : 0;
  return est;
}

}  // namespace

GradientEstimate p3o_gradient(const Policy& policy, ConstSpan params,
                              std::span<const ScoredTrajectory> samples, bool weighted, Execution exec) {
  const std::size_t K = samples.size();
  Vector w(K);
  for (std::size_t i = 0; i < K; ++i)
    w[i] = weighted ? samples[i].log_weight : (samples[i].log_weight == kNegInf ? kNegInf : 0.0);
  if (K == 0 || normalize_log_weights(w) == kNegInf)
    throw NumericError(NumericError::Kind::kNoSamples, "gradient estimate needs at least one sample");
  for (double& x : w) x = std::exp(x);
  return estimate(policy, params, samples, w, [](std::size_t, Vector& sw) { sw.clear(); }, exec);
}

GradientEstimate reinforce_gradient(const Policy& policy, ConstSpan params,
                                    std::span<const ScoredTrajectory> samples, bool baseline,
                                    Execution exec) {
  const std::size_t K = samples.size();
  Vector w(K, 0.0);
  std::size_t live = 0;
  for (std::size_t i = 0; i < K; ++i) live += samples[i].log_weight != kNegInf;
  if (live == 0) throw NumericError(NumericError::Kind::kNoSamples, "gradient estimate needs at least one sample");
  for (std::size_t i = 0; i < K; ++i)
    if (samples[i].log_weight != kNegInf) w[i] = 1.0 / static_cast<double>(live);

  // Reward-to-go per sample: G_t = sum_{k=t+1}^{T} ell_k for t = 0..T-1.
  std::vector<Vector> togo(K);
  std::size_t T_max = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const auto& u = samples[i].utilities;
    const std::size_t T = samples[i].trajectory.actions.size();
    if (u.size() != T) throw ConfigError("REINFORCE sample needs one utility per action");
    togo[i].assign(T, 0.0);
    double run = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      run += u[t];
      togo[i][t] = run;
    }
    T_max = std::max(T_max, T);
  }
  if (baseline) {
    Vector mean(T_max, 0.0), count(T_max, 0.0);
    for (std::size_t i = 0; i < K; ++i)
      if (w[i] > 0.0)
        for (std::size_t t = 0; t < togo[i].size(); ++t) {
          mean[t] += togo[i][t];
          count[t] += 1.0;
        }
    for (std::size_t t = 0; t < T_max; ++t)
      if (count[t] > 0.0) mean[t] /= count[t];
    for (auto& g : togo)
      for (std::size_t t = 0; t < g.size(); ++t) g[t] -= mean[t];
  }
  return estimate(policy, params, samples, w, [&](std::size_t i, Vector& sw) { sw = togo[i]; }, exec);
}

}  // namespace p3o
