#include "p3o/nested_smc.hpp"

#include <cmath>
#include <numeric>

#include "p3o/errors.hpp"
#include "p3o/neural_policy.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

const char* to_string(OuterResampling m) {
  switch (m) {
    case OuterResampling::kEveryStep: return "every-step";
    case OuterResampling::kEssThreshold: return "ess";
    case OuterResampling::kNever: return "never";
  }
  return "?";
}

OuterResampling parse_outer_resampling(const std::string& s) {
  if (s == "every-step") return OuterResampling::kEveryStep;
  if (s == "ess") return OuterResampling::kEssThreshold;
  if (s == "never") return OuterResampling::kNever;
  throw ConfigError("unknown outer resampling mode '" + s + "' (every-step, ess, never)");
}

const char* to_string(InnerFilter m) { return m == InnerFilter::kParticle ? "particle" : "exact"; }

InnerFilter parse_inner_filter(const std::string& s) {
  if (s == "particle") return InnerFilter::kParticle;
  if (s == "exact") return InnerFilter::kExact;
  throw ConfigError("unknown inner filter '" + s + "' (particle, exact)");
}

void NestedSmcConfig::validate() const {
  if (n_history == 0) throw ConfigError("smc.n_history must be positive");
  if (n_belief == 0) throw ConfigError("smc.n_belief must be positive");
  if (use_potentials && !(eta > 0.0)) throw ConfigError("eta must be positive");
  if (!std::isfinite(eta)) throw ConfigError("eta must be finite");
  if (!(ess_threshold > 0.0 && ess_threshold <= 1.0))
    throw ConfigError("smc.ess_threshold must lie in (0, 1]");
}

// ---------------------------------------------------------------------------
// FilterTape

ConstSpan FilterTape::observation(int t, std::size_t n) const {
  return ConstSpan(steps[t].observations).subspan(n * obs_dim, obs_dim);
}

ConstSpan FilterTape::action_into(int t, std::size_t n) const {
  return ConstSpan(steps[t].actions).subspan(n * action_dim, action_dim);
}

ConstSpan FilterTape::policy_input(int t, std::size_t n) const {
  return ConstSpan(steps[t].policy_inputs).subspan(n * input_dim, input_dim);
}

ConstSpan FilterTape::belief_state(int t, std::size_t n, std::size_t m) const {
  return ConstSpan(steps[t].belief_states).subspan((n * n_belief + m) * state_dim, state_dim);
}

ConstSpan FilterTape::belief_log_weights(int t, std::size_t n) const {
  return ConstSpan(steps[t].belief_log_weights).subspan(n * n_belief, n_belief);
}

BeliefParticles FilterTape::belief(int t, std::size_t n) const {
  BeliefParticles b;
  b.dim = state_dim;
  const auto s = ConstSpan(steps[t].belief_states).subspan(n * n_belief * state_dim, n_belief * state_dim);
  b.states.assign(s.begin(), s.end());
  const auto w = belief_log_weights(t, n);
  b.log_weights.assign(w.begin(), w.end());
  return b;
}

std::size_t FilterTape::ancestor_at(int t, std::size_t n, int s) const {
  for (int u = t; u > s; --u) n = steps[u].ancestors[n];
  return n;
}

std::vector<std::size_t> FilterTape::lineage(std::size_t n) const {
  const int T = horizon();
  std::vector<std::size_t> idx(static_cast<std::size_t>(T) + 1);
  idx[T] = n;
  for (int t = T; t > 0; --t) idx[t - 1] = steps[t].ancestors[idx[t]];
  return idx;
}

Trajectory FilterTape::trajectory(std::span<const std::size_t> indices) const {
  Trajectory traj;
  const int T = static_cast<int>(indices.size()) - 1;
  for (int t = 0; t <= T; ++t) {
    const auto z = observation(t, indices[t]);
    traj.observations.emplace_back(z.begin(), z.end());
    if (t > 0) {
      const auto a = action_into(t, indices[t]);
      traj.actions.emplace_back(a.begin(), a.end());
    }
  }
  return traj;
}

std::vector<Vector> FilterTape::inputs(std::span<const std::size_t> indices) const {
  std::vector<Vector> out;
  for (std::size_t t = 0; t + 1 < indices.size(); ++t) {
    const auto x = policy_input(static_cast<int>(t), indices[t]);
    out.emplace_back(x.begin(), x.end());
  }
  return out;
}

void FilterTape::rebuild_policy_states(const Policy& policy, ConstSpan params) {
  const int T = horizon();
  policy_states.assign(steps.size(), std::vector<PolicyState>(n_history));
  for (int t = 0; t <= T; ++t)
    for (std::size_t n = 0; n < n_history; ++n) {
      PolicyState st =
          t == 0 ? policy.initial_state() : policy_states[t - 1][steps[t].ancestors[n]];
      if (t < T && steps[t].log_weights[n] != kNegInf) policy.observe(params, st, policy_input(t, n));
      policy_states[t][n] = std::move(st);
    }
}

// ---------------------------------------------------------------------------
// Filter

double slew_utility(const PomdpModel& model, ConstSpan action, ConstSpan prev_action) {
  const double rho = model.slew_penalty();
  if (rho == 0.0 || prev_action.empty()) return 0.0;
  double d2 = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double d = action[i] - prev_action[i];
    d2 += d * d;
  }
  return -rho * d2;
}

namespace {

Vector policy_input_for(const Policy& policy, const BeliefParticles& belief, ConstSpan z,
                        ConstSpan prev_action) {
  if (policy.input_mode() == InputMode::kBelief) return belief_features(belief);
  return history_input(z, prev_action, policy.action_dim());
}

template <class T>
void copy_row(std::span<const T> src, std::vector<T>& dst, std::size_t row) {
  std::copy(src.begin(), src.end(), dst.begin() + static_cast<long>(row * src.size()));
}

}  // namespace

NestedFilterResult run_nested_filter(const PomdpModel& model, const Policy& policy, ConstSpan params,
                                     const NestedSmcConfig& config) {
  config.validate();
  const int T = model.horizon();
  if (T < 1) throw ConfigError("model horizon must be at least 1");
  if (policy.action_dim() != model.action_dim())
    throw ConfigError("policy action_dim " + std::to_string(policy.action_dim()) +
                      " does not match model action_dim " + std::to_string(model.action_dim()));
  const bool exact = config.inner == InnerFilter::kExact;
  const std::size_t N = config.n_history;
  const std::size_t M = exact ? init_exact_belief(model).size() : config.n_belief;
  const std::size_t S = model.state_dim(), Z = model.obs_dim(), A = model.action_dim();
  const std::size_t D = policy.input_dim();
  if (policy.input_mode() == InputMode::kBelief && D != belief_feature_dim(S))
    throw ConfigError("belief-mode policy expects input_dim " + std::to_string(D) + " but the model needs " +
                      std::to_string(belief_feature_dim(S)));
  if (policy.input_mode() == InputMode::kHistory && D != Z + A)
    throw ConfigError("history-mode policy expects input_dim " + std::to_string(D) + " but the model needs " +
                      std::to_string(Z + A));

  NestedFilterResult res;
  FilterTape& tape = res.tape;
  tape.n_history = N;
  tape.n_belief = M;
  tape.state_dim = S;
  tape.obs_dim = Z;
  tape.action_dim = A;
  tape.input_dim = D;
  tape.eta = config.use_potentials ? config.eta : 0.0;
  tape.exact_inner = exact;
  tape.steps.resize(static_cast<std::size_t>(T) + 1);
  tape.policy_states.assign(tape.steps.size(), std::vector<PolicyState>(N));

  auto alloc = [&](TapeStep& st) {
    st.observations.assign(N * Z, 0.0);
    st.actions.assign(N * A, 0.0);
    st.log_weights.assign(N, 0.0);
    st.ancestors.resize(N);
    std::iota(st.ancestors.begin(), st.ancestors.end(), 0u);
    st.belief_ancestors.resize(N * M);
    for (std::size_t i = 0; i < N * M; ++i) st.belief_ancestors[i] = static_cast<std::uint32_t>(i % M);
    st.belief_states.assign(N * M * S, 0.0);
    st.belief_log_weights.assign(N * M, 0.0);
    st.utilities.assign(N, 0.0);
    st.policy_inputs.assign(N * D, 0.0);
  };

  std::vector<BeliefParticles> beliefs(N), next_beliefs(N);
  std::vector<char> alive(N, 1), next_alive(N, 1);

  auto record_belief = [&](TapeStep& st, std::size_t n, const BeliefParticles& b) {
    copy_row<double>(b.states, st.belief_states, n);
    copy_row<double>(b.log_weights, st.belief_log_weights, n);
  };

  // Step 0: initial beliefs, z_0 from the prior predictive, first input.
  {
    TapeStep& st0 = tape.steps[0];
    alloc(st0);
    for_each_index(N, config.execution, [&](std::size_t n) {
      RngStream rng = derive_stream(config.seed, StreamTag::kInit, n);
      BeliefParticles b = exact ? init_exact_belief(model) : init_belief(model, M, rng);
      Vector z(Z);
      sample_predictive_observation(b, model, rng, z);
      try {
        reweight(b, z, model);
      } catch (const NumericError& e) {
        if (e.kind() != NumericError::Kind::kBeliefCollapse) throw;
        alive[n] = 0;
      }
      copy_row<double>(z, st0.observations, n);
      record_belief(st0, n, b);
      PolicyState ps = policy.initial_state();
      if (alive[n]) {
        const Vector x = policy_input_for(policy, b, z, {});
        copy_row<double>(x, st0.policy_inputs, n);
        policy.observe(params, ps, x);
      }
      tape.policy_states[0][n] = std::move(ps);
      beliefs[n] = std::move(b);
    });
    for (std::size_t n = 0; n < N; ++n)
      st0.log_weights[n] = alive[n] ? -std::log(static_cast<double>(N)) : kNegInf;
    if (normalize_log_weights(st0.log_weights) == kNegInf)
      throw NumericError(NumericError::Kind::kAllParticlesCollapsed,
                         "every history particle collapsed at step 0", 0);
    res.collapsed += static_cast<std::size_t>(std::count(alive.begin(), alive.end(), 0));
    res.model_calls += N * M;
  }

  Vector vbar(N);
  for (int t = 0; t < T; ++t) {
    TapeStep& cur = tape.steps[t];
    TapeStep& nxt = tape.steps[t + 1];
    alloc(nxt);

    // Outer resampling.
    bool resample = config.outer == OuterResampling::kEveryStep;
    if (config.outer == OuterResampling::kEssThreshold)
      resample = effective_sample_size_log(cur.log_weights) <
                 config.ess_threshold * static_cast<double>(N);
    if (resample) {
      RngStream rng = derive_stream(config.seed, StreamTag::kOuterResample, static_cast<std::uint64_t>(t));
      const auto idx = resample_indices(cur.log_weights, N, rng, config.resample);
      for (std::size_t n = 0; n < N; ++n) nxt.ancestors[n] = static_cast<std::uint32_t>(idx[n]);
      vbar.assign(N, -std::log(static_cast<double>(N)));
      cur.resampled = true;
      ++res.resamples;
    } else {
      vbar.assign(cur.log_weights.begin(), cur.log_weights.end());
    }

    for_each_index(N, config.execution, [&](std::size_t n) {
      const std::size_t a = nxt.ancestors[n];
      PolicyState ps = tape.policy_states[t][a];
      if (!alive[a]) {
        next_alive[n] = 0;
        next_beliefs[n] = beliefs[a];
        record_belief(nxt, n, next_beliefs[n]);
        tape.policy_states[t + 1][n] = std::move(ps);
        return;
      }
      RngStream rng = derive_stream(config.seed, StreamTag::kParticleStep, static_cast<std::uint64_t>(t), n);
      BeliefParticles b = beliefs[a];
      if (!exact) {
        std::vector<std::size_t> bidx;
        resample_belief(b, rng, config.resample, &bidx);
        for (std::size_t m = 0; m < M; ++m)
          nxt.belief_ancestors[n * M + m] = static_cast<std::uint32_t>(bidx[m]);
      }
      Vector act(A);
      policy.sample(params, ps, rng, act);
      if (exact)
        propagate_exact(b, act, model);
      else
        propagate(b, act, model, rng);
      Vector z(Z);
      sample_predictive_observation(b, model, rng, z);
      bool ok = true;
      try {
        reweight(b, z, model);
      } catch (const NumericError& e) {
        if (e.kind() != NumericError::Kind::kBeliefCollapse) throw;
        ok = false;
      }
      copy_row<double>(z, nxt.observations, n);
      copy_row<double>(act, nxt.actions, n);
      record_belief(nxt, n, b);
      next_alive[n] = ok ? 1 : 0;
      if (ok) {
        double ell = expected_reward(b, act, t + 1, model);
        if (config.slew_in_utility && t > 0) ell += slew_utility(model, act, tape.action_into(t, a));
        nxt.utilities[n] = ell;
        // The terminal input is stored for plotting but never consumed.
        const Vector x = policy_input_for(policy, b, z, act);
        copy_row<double>(x, nxt.policy_inputs, n);
        if (t + 1 < T) policy.observe(params, ps, x);
      }
      tape.policy_states[t + 1][n] = std::move(ps);
      next_beliefs[n] = std::move(b);
    });

    std::size_t live = 0;
    for (std::size_t n = 0; n < N; ++n) {
      if (next_alive[n] && !alive[nxt.ancestors[n]]) next_alive[n] = 0;
      if (next_alive[n]) {
        ++live;
        const double tilt = config.use_potentials ? config.eta * nxt.utilities[n] : 0.0;
        nxt.log_weights[n] = vbar[n] + tilt;
      } else {
        nxt.log_weights[n] = kNegInf;
        if (alive[nxt.ancestors[n]]) ++res.collapsed;
      }
    }
    res.model_calls += live * M;
    const double inc = normalize_log_weights(nxt.log_weights);
    if (inc == kNegInf)
      throw NumericError(NumericError::Kind::kAllParticlesCollapsed,
                         "every history particle collapsed at step " + std::to_string(t + 1), t + 1);
    res.log_normalizer += inc;
    res.ess.push_back(effective_sample_size_log(nxt.log_weights));
    std::swap(beliefs, next_beliefs);
    std::swap(alive, next_alive);
  }

  res.belief_ess.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    double acc = 0.0, cnt = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      if (tape.steps[t].log_weights[n] != kNegInf) {
        acc += effective_sample_size_log(tape.belief_log_weights(t, n));
        cnt += 1.0;
      }
    res.belief_ess[t] = cnt > 0.0 ? acc / cnt : 0.0;
  }

  res.particles.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    HistoryParticle& hp = res.particles[n];
    hp.lineage = tape.lineage(n);
    hp.trajectory = tape.trajectory(hp.lineage);
    hp.log_weight = tape.steps[T].log_weights[n];
    hp.belief = std::move(beliefs[n]);
  }
  return res;
}

NestedFilterResult run_prior_rollouts(const PomdpModel& model, const Policy& policy,
                                      ConstSpan params, NestedSmcConfig config) {
  config.use_potentials = false;
  config.outer = OuterResampling::kNever;
  config.seed = derive_stream(config.seed, StreamTag::kPrior).next_u64();
  return run_nested_filter(model, policy, params, config);
}

}  // namespace p3o
