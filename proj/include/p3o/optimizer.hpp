#pragma once

#include <cstdint>
#include <string>

#include "p3o/pomdp.hpp"

namespace p3o {

enum class OptimizerKind { kAdam, kSgd };

const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);

/// Gradient ascent phi += alpha_k * step, alpha_k = learning_rate / (1 + decay * k).
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  /// Global-norm clip; non-positive disables clipping.
  double clip_norm = 10.0;

  void validate() const;
};

struct OptimizerState {
  Vector m, v;  // first and second moment accumulators (Adam)
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;  // updates dropped for non-finite gradients
  std::uint64_t clipped = 0;
};

struct UpdateInfo {
  bool applied = false;
  bool clipped = false;
  double grad_norm = 0.0;
  double step_size = 0.0;
};

/// One ascent step. A gradient with any non-finite entry leaves params and
/// moments untouched and increments state.skipped. Deterministic.
UpdateInfo apply_update(Vector& params, ConstSpan gradient, OptimizerState& state,
                        const OptimizerConfig& config);

}  // namespace p3o
