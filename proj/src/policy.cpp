#include "p3o/policy.hpp"

#include <algorithm>
#include <cmath>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

const char* to_string(InputMode mode) {
  return mode == InputMode::kHistory ? "history" : "belief";
}

InputMode parse_input_mode(const std::string& s) {
  if (s == "history") return InputMode::kHistory;
  if (s == "belief") return InputMode::kBelief;
  throw ConfigError("unknown policy input mode '" + s + "' (expected history or belief)");
}

Vector history_input(ConstSpan observation, ConstSpan prev_action, std::size_t action_dim) {
  Vector in(observation.begin(), observation.end());
  if (prev_action.empty())
    in.resize(in.size() + action_dim, 0.0);
  else
    in.insert(in.end(), prev_action.begin(), prev_action.end());
  return in;
}

std::vector<Vector> history_inputs(const Trajectory& traj, std::size_t action_dim) {
  std::vector<Vector> inputs;
  inputs.reserve(traj.actions.size());
  for (std::size_t t = 0; t < traj.actions.size(); ++t)
    inputs.push_back(history_input(traj.observations[t],
                                   t == 0 ? ConstSpan{} : ConstSpan(traj.actions[t - 1]),
                                   action_dim));
  return inputs;
}

ScoreResult score_trajectory(const Policy& policy, ConstSpan params, const Trajectory& traj,
                             std::span<const Vector> inputs) {
  ScoreResult r;
  r.gradient.assign(policy.num_params(), 0.0);
  if (traj.actions.empty()) return r;
  std::vector<Vector> built;
  if (inputs.empty()) {
    if (policy.input_mode() == InputMode::kBelief)
      throw ConfigError("belief-mode policy needs per-step belief features to score a trajectory");
    built = history_inputs(traj, policy.action_dim());
    inputs = built;
  }
  r.log_prob = policy.score(params, inputs.first(traj.actions.size()), traj.actions, {}, r.gradient);
  return r;
}

namespace squashed_gaussian {

namespace {
std::atomic<std::uint64_t> g_clamps{0};
}

std::uint64_t clamp_count() { return g_clamps.load(std::memory_order_relaxed); }

double sample(ConstSpan mean, ConstSpan log_std, ConstSpan bound, RngStream& rng, MutSpan action) {
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double u = mean[i] + std::exp(log_std[i]) * rng.normal();
    const double b = i < bound.size() ? bound[i] : 0.0;
    action[i] = b > 0.0 ? b * std::tanh(u) : u;
  }
  // Density of the action actually returned, so sampling and scoring agree
  // even when tanh saturates in floating point.
  return log_prob(mean, log_std, bound, action);
}

double log_prob(ConstSpan mean, ConstSpan log_std, ConstSpan bound, ConstSpan action,
                MutSpan dmean, MutSpan dlog_std, double weight) {
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double b = i < bound.size() ? bound[i] : 0.0;
    double u = action[i];
    if (b > 0.0) {
      double y = action[i] / b;
      constexpr double lim = 1.0 - kBoundInset;
      if (y > lim || y < -lim) {
        g_clamps.fetch_add(1, std::memory_order_relaxed);
        y = std::clamp(y, -lim, lim);
      }
      u = std::atanh(y);
      lp -= std::log(b) + std::log1p(-y * y);
    }
    const double sigma = std::exp(log_std[i]);
    const double d = (u - mean[i]) / sigma;
    lp += -0.5 * (d * d + kLogTwoPi) - log_std[i];
    if (!dmean.empty()) dmean[i] += weight * d / sigma;
    if (!dlog_std.empty()) dlog_std[i] += weight * (d * d - 1.0);
  }
  return lp;
}

void mode(ConstSpan mean, ConstSpan bound, MutSpan action) {
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double b = i < bound.size() ? bound[i] : 0.0;
    action[i] = b > 0.0 ? b * std::tanh(mean[i]) : mean[i];
  }
}

}  // namespace squashed_gaussian

}  // namespace p3o
