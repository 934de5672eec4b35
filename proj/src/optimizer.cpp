#include "p3o/optimizer.hpp"

#include <cmath>

#include "p3o/errors.hpp"

namespace p3o {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (adam, sgd)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("optim.learning_rate must be positive");
  if (!(decay >= 0.0)) throw ConfigError("optim.decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optim.epsilon must be positive");
}

UpdateInfo apply_update(Vector& params, ConstSpan gradient, OptimizerState& state,
                        const OptimizerConfig& config) {
  if (gradient.size() != params.size())
    throw ConfigError("gradient has " + std::to_string(gradient.size()) + " entries, parameters have " +
                      std::to_string(params.size()));
  UpdateInfo info;
  double n2 = 0.0;
  for (double g : gradient) n2 += g * g;
  info.grad_norm = std::sqrt(n2);
  if (!std::isfinite(info.grad_norm)) {
    ++state.skipped;
    return info;
  }
  double scale = 1.0;
  if (config.clip_norm > 0.0 && info.grad_norm > config.clip_norm) {
    scale = config.clip_norm / info.grad_norm;
    info.clipped = true;
    ++state.clipped;
  }
  const double alpha = config.learning_rate / (1.0 + config.decay * static_cast<double>(state.step));
  info.step_size = alpha;
  ++state.step;
  if (config.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += alpha * scale * gradient[i];
  } else {
    if (state.m.size() != params.size()) {
      state.m.assign(params.size(), 0.0);
      state.v.assign(params.size(), 0.0);
    }
    const double k = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, k);
    const double c2 = 1.0 - std::pow(config.beta2, k);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = scale * gradient[i];
      state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
      state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
      params[i] += alpha * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + config.epsilon);
    }
  }
  info.applied = true;
  return info;
}

}  // namespace p3o
