#include "p3o/tabular_policy.hpp"

#include <cmath>
#include <sstream>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"
#include "p3o/oracle.hpp"

namespace p3o {

TabularSoftmaxPolicy::TabularSoftmaxPolicy(std::size_t num_observations, std::size_t num_actions,
                                           int horizon)
    : num_observations_(num_observations), num_actions_(num_actions), horizon_(horizon) {
  if (num_observations == 0 || num_actions == 0 || horizon < 1)
    throw ConfigError("tabular policy needs positive cardinalities and horizon");
  std::size_t count = num_observations;  // histories of length 0: z_0 only
  for (int t = 0; t < horizon; ++t) {
    offsets_.push_back(num_rows_);
    num_rows_ += count;
    if (num_rows_ > (std::size_t{1} << 24)) throw ConfigError("tabular policy too large");
    count *= num_actions * num_observations;
  }
}

std::string TabularSoftmaxPolicy::descriptor() const {
  std::ostringstream os;
  os << "tabular observations=" << num_observations_ << " actions=" << num_actions_
     << " horizon=" << horizon_;
  return os.str();
}

Vector TabularSoftmaxPolicy::initial_params(std::uint64_t seed) const {
  Vector p(num_params(), 0.0);
  if (seed != 0) {
    auto rng = derive_stream(seed, StreamTag::kParams);
    for (double& x : p) x = 0.5 * rng.normal();
  }
  return p;
}

void TabularSoftmaxPolicy::observe(ConstSpan, PolicyState& state, ConstSpan input) const {
  const std::size_t z = discrete_index(input.first(1), num_observations_);
  if (state.step + 1 >= horizon_) throw ConfigError("tabular policy: history longer than horizon");
  if (state.step < 0) {
    state.code = z;
  } else {
    const std::size_t a = discrete_index(input.subspan(1, 1), num_actions_);
    state.code = (state.code * num_actions_ + a) * num_observations_ + z;
  }
  ++state.step;
}

std::size_t TabularSoftmaxPolicy::row_offset(const PolicyState& state) const {
  if (state.step < 0) throw ConfigError("tabular policy: no input observed yet");
  return (offsets_[static_cast<std::size_t>(state.step)] + state.code) * num_actions_;
}

Vector TabularSoftmaxPolicy::probabilities(ConstSpan params, const PolicyState& state) const {
  const std::size_t off = row_offset(state);
  Vector logits(params.begin() + off, params.begin() + off + num_actions_);
  normalize_log_weights(logits);
  for (double& l : logits) l = std::exp(l);
  return logits;
}

double TabularSoftmaxPolicy::sample(ConstSpan params, const PolicyState& state, RngStream& rng,
                                    MutSpan action) const {
  const Vector p = probabilities(params, state);
  Vector cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) cdf[i] = (acc += p[i]);
  const std::size_t a = inverse_cdf(cdf, rng.uniform() * acc);
  action[0] = static_cast<double>(a);
  return log_prob(params, state, action);
}

double TabularSoftmaxPolicy::log_prob(ConstSpan params, const PolicyState& state,
                                      ConstSpan action) const {
  const std::size_t off = row_offset(state);
  const std::size_t a = discrete_index(action, num_actions_);
  const ConstSpan row = params.subspan(off, num_actions_);
  return row[a] - logsumexp(row);
}

void TabularSoftmaxPolicy::mode_action(ConstSpan params, const PolicyState& state,
                                       MutSpan action) const {
  const std::size_t off = row_offset(state);
  std::size_t best = 0;
  for (std::size_t a = 1; a < num_actions_; ++a)
    if (params[off + a] > params[off + best]) best = a;
  action[0] = static_cast<double>(best);
}

double TabularSoftmaxPolicy::score(ConstSpan params, std::span<const Vector> inputs,
                                   std::span<const Vector> actions,
                                   std::span<const double> step_weights, MutSpan grad) const {
  PolicyState state = initial_state();
  double total = 0.0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    observe(params, state, inputs[t]);
    const std::size_t off = row_offset(state);
    const std::size_t a = discrete_index(actions[t], num_actions_);
    const ConstSpan row = params.subspan(off, num_actions_);
    const double lse = logsumexp(row);
    total += row[a] - lse;
    const double w = step_weights.empty() ? 1.0 : step_weights[t];
    if (w == 0.0) continue;
    for (std::size_t b = 0; b < num_actions_; ++b)
      grad[off + b] += w * ((b == a ? 1.0 : 0.0) - std::exp(row[b] - lse));
  }
  return total;
}

}  // namespace p3o
