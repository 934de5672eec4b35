#include "p3o/belief_filter.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

const char* to_string(ResampleScheme s) {
  return s == ResampleScheme::kMultinomial ? "multinomial" : "systematic";
}

ResampleScheme parse_resample_scheme(const std::string& s) {
  if (s == "multinomial") return ResampleScheme::kMultinomial;
  if (s == "systematic") return ResampleScheme::kSystematic;
  throw ConfigError("unknown resampling scheme '" + s + "'");
}

BeliefParticles init_belief(const PomdpModel& model, std::size_t M, RngStream& rng) {
  if (M == 0) throw ConfigError("belief filter needs at least one particle");
  BeliefParticles b;
  b.dim = model.state_dim();
  b.states.resize(M * b.dim);
  b.log_weights.assign(M, -std::log(static_cast<double>(M)));
  for (std::size_t m = 0; m < M; ++m) model.sample_initial(rng, b.state(m));
  return b;
}

BeliefParticles init_exact_belief(const PomdpModel& model) {
  const auto support = model.finite_support();
  if (!support) throw ConfigError("model '" + model.name() + "' has no finite state support");
  BeliefParticles b;
  b.dim = model.state_dim();
  for (const auto& s : *support) {
    b.states.insert(b.states.end(), s.begin(), s.end());
    b.log_weights.push_back(model.initial_logdensity(s));
  }
  normalize_log_weights(b.log_weights);
  return b;
}

void propagate(BeliefParticles& belief, ConstSpan action, const PomdpModel& model, RngStream& rng) {
  Vector next(belief.dim);
  for (std::size_t m = 0; m < belief.size(); ++m) {
    model.transition_sample(belief.state(m), action, rng, next);
    for (double x : next)
      if (!std::isfinite(x))
        throw NumericError(NumericError::Kind::kModelDivergence,
                           "non-finite state after transition of belief particle " +
                               std::to_string(m),
                           static_cast<long>(m));
    std::copy(next.begin(), next.end(), belief.state(m).begin());
  }
}

void propagate_exact(BeliefParticles& belief, ConstSpan action, const PomdpModel& model) {
  const std::size_t M = belief.size();
  Vector next(M), terms(M);
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t i = 0; i < M; ++i)
      terms[i] = belief.log_weights[i] == kNegInf
                     ? kNegInf
                     : belief.log_weights[i] +
                           model.transition_logdensity(belief.state(j), belief.state(i), action);
    next[j] = logsumexp(terms);
  }
  belief.log_weights = std::move(next);
  normalize_log_weights(belief.log_weights);
}

void reweight(BeliefParticles& belief, ConstSpan observation, const PomdpModel& model) {
  for (std::size_t m = 0; m < belief.size(); ++m)
    if (belief.log_weights[m] != kNegInf)
      belief.log_weights[m] += model.observation_logdensity(observation, belief.state(m));
  const double lse = normalize_log_weights(belief.log_weights);
  if (!std::isfinite(lse))
    throw NumericError(NumericError::Kind::kBeliefCollapse,
                       "every belief particle has zero observation likelihood");
  belief.log_norm_increment = lse;
}

double expected_reward(const BeliefParticles& belief, ConstSpan prev_action, int t,
                       const PomdpModel& model) {
  double r = 0.0;
  for (std::size_t m = 0; m < belief.size(); ++m) {
    const double w = std::exp(belief.log_weights[m]);
    if (w > 0.0) r += w * model.reward(belief.state(m), prev_action, t);
  }
  return r;
}

void sample_predictive_observation(const BeliefParticles& belief, const PomdpModel& model,
                                   RngStream& rng, MutSpan observation) {
  const auto idx = resample_indices(belief.log_weights, 1, rng);
  model.observation_sample(belief.state(idx[0]), rng, observation);
}

std::vector<std::size_t> resample_indices(ConstSpan log_weights, std::size_t count, RngStream& rng,
                                          ResampleScheme scheme) {
  const std::size_t M = log_weights.size();
  Vector cdf(M);
  double acc = 0.0;
  for (std::size_t m = 0; m < M; ++m) cdf[m] = (acc += std::exp(log_weights[m]));
  if (!(acc > 0.0)) throw NumericError(NumericError::Kind::kAllParticlesCollapsed, "no weight mass to resample");
  std::vector<std::size_t> out(count);
  if (scheme == ResampleScheme::kMultinomial) {
    for (auto& i : out) i = inverse_cdf(cdf, rng.uniform() * acc);
  } else {
    const double u = rng.uniform();
    for (std::size_t k = 0; k < count; ++k)
      out[k] = inverse_cdf(cdf, (static_cast<double>(k) + u) / static_cast<double>(count) * acc);
  }
  return out;
}

void resample_belief(BeliefParticles& belief, RngStream& rng, ResampleScheme scheme,
                     std::vector<std::size_t>* indices) {
  const std::size_t M = belief.size();
  auto idx = resample_indices(belief.log_weights, M, rng, scheme);
  Vector states(belief.states.size());
  for (std::size_t m = 0; m < M; ++m) {
    const auto src = belief.state(idx[m]);
    std::copy(src.begin(), src.end(), states.begin() + static_cast<long>(m * belief.dim));
  }
  belief.states = std::move(states);
  belief.log_weights.assign(M, -std::log(static_cast<double>(M)));
  if (indices) *indices = std::move(idx);
}

double belief_ess(const BeliefParticles& belief) {
  return effective_sample_size_log(belief.log_weights);
}

BeliefMoments belief_moments(const BeliefParticles& belief) {
  const std::size_t d = belief.dim;
  BeliefMoments mom{Vector(d, 0.0), Vector(d * d, 0.0)};
  for (std::size_t m = 0; m < belief.size(); ++m) {
    const double w = std::exp(belief.log_weights[m]);
    const auto s = belief.state(m);
    for (std::size_t i = 0; i < d; ++i) mom.mean[i] += w * s[i];
  }
  for (std::size_t m = 0; m < belief.size(); ++m) {
    const double w = std::exp(belief.log_weights[m]);
    const auto s = belief.state(m);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        mom.covariance[i * d + j] += w * (s[i] - mom.mean[i]) * (s[j] - mom.mean[j]);
  }
  return mom;
}

double belief_max_eigenvalue(const BeliefParticles& belief) {
  const auto mom = belief_moments(belief);
  const auto d = static_cast<Eigen::Index>(belief.dim);
  const Eigen::Map<const Eigen::MatrixXd> cov(mom.covariance.data(), d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace p3o
