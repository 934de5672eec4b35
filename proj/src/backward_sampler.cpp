#include "p3o/backward_sampler.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <set>

#include <spdlog/spdlog.h>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

const char* to_string(BackwardMode m) { return m == BackwardMode::kFull ? "full" : "two-ancestor"; }

BackwardMode parse_backward_mode(const std::string& s) {
  if (s == "full") return BackwardMode::kFull;
  if (s == "two-ancestor") return BackwardMode::kTwoAncestor;
  throw ConfigError("unknown backward sampling mode '" + s + "' (full, two-ancestor)");
}

double belief_transition_logprob(const FilterTape& tape, const PomdpModel& model, int t,
                                 std::size_t n, std::size_t next) {
  const std::size_t M = tape.n_belief;
  const auto a = tape.action_into(t + 1, next);
  const auto logw = tape.belief_log_weights(t, n);
  Vector terms(M);
  double total = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    const auto target = tape.belief_state(t + 1, next, m);
    for (std::size_t k = 0; k < M; ++k) {
      if (logw[k] == kNegInf) {
        terms[k] = kNegInf;
        continue;
      }
      const double lf = model.transition_logdensity(target, tape.belief_state(t, n, k), a);
      if (std::isnan(lf) || lf == std::numeric_limits<double>::infinity())
        throw NumericError(NumericError::Kind::kInvalidModel,
                           "transition log-density is not finite at step " + std::to_string(t), t);
      terms[k] = logw[k] + lf;
    }
    total += logsumexp(terms);
    if (total == kNegInf) return kNegInf;
  }
  return total;
}

namespace {

double policy_log_terms(const FilterTape& tape, const Policy& policy, ConstSpan params, int t,
                        std::size_t n, std::span<const std::size_t> indices) {
  const int T = tape.horizon();
  if (policy.markov_in_input()) {
    PolicyState st = policy.initial_state();
    policy.observe(params, st, tape.policy_input(t, n));
    return policy.log_prob(params, st, tape.action_into(t + 1, indices[t + 1]));
  }
  PolicyState st = tape.policy_states[t][n];
  double lp = policy.log_prob(params, st, tape.action_into(t + 1, indices[t + 1]));
  for (int s = t + 1; s < T; ++s) {
    policy.observe(params, st, tape.policy_input(s, indices[s]));
    lp += policy.log_prob(params, st, tape.action_into(s + 1, indices[s + 1]));
  }
  return lp;
}

void check_tape(const FilterTape& tape, const Policy& policy) {
  if (tape.exact_inner)
    throw ConfigError("backward sampling needs particle beliefs; this tape used the exact inner filter");
  if (tape.steps.empty()) throw ConfigError("empty tape");
  if (tape.input_dim != policy.input_dim() || tape.action_dim != policy.action_dim())
    throw ConfigError("policy dimensions do not match the tape");
  if (!policy.markov_in_input() && tape.policy_states.size() != tape.steps.size())
    throw ConfigError("tape has no policy states; call rebuild_policy_states first");
}

}  // namespace

double smoothing_log_terms(const FilterTape& tape, const PomdpModel& model, const Policy& policy,
                           ConstSpan params, int t, std::size_t n,
                           std::span<const std::size_t> indices) {
  const double lb = belief_transition_logprob(tape, model, t, n, indices[t + 1]);
  if (lb == kNegInf) return kNegInf;
  return lb + policy_log_terms(tape, policy, params, t, n, indices);
}

BackwardResult backward_sample(const FilterTape& tape, const PomdpModel& model, const Policy& policy,
                               ConstSpan params, std::size_t K, BackwardMode mode,
                               std::uint64_t seed, Execution exec) {
  check_tape(tape, policy);
  const int T = tape.horizon();
  const std::size_t N = tape.n_history;

  // Belief-transition terms for all N candidates depend only on (t, S_{t+1});
  // full mode caches them. So do the policy terms of Markov policies.
  const bool cache_policy = policy.markov_in_input();
  std::vector<std::vector<std::shared_ptr<const Vector>>> cache(
      static_cast<std::size_t>(std::max(T, 0)), std::vector<std::shared_ptr<const Vector>>(N));
  std::mutex cache_mutex;
  auto cached_terms = [&](int t, std::size_t next, std::span<const std::size_t> indices) {
    {
      std::lock_guard<std::mutex> lock(cache_mutex);
      if (cache[t][next]) return cache[t][next];
    }
    auto v = std::make_shared<Vector>(N);
    for (std::size_t n = 0; n < N; ++n) {
      if (tape.steps[t].log_weights[n] == kNegInf) {
        (*v)[n] = kNegInf;
        continue;
      }
      double lt = belief_transition_logprob(tape, model, t, n, next);
      if (cache_policy && lt != kNegInf) lt += policy_log_terms(tape, policy, params, t, n, indices);
      (*v)[n] = lt;
    }
    std::lock_guard<std::mutex> lock(cache_mutex);
    if (!cache[t][next]) cache[t][next] = std::move(v);
    return cache[t][next];
  };

  BackwardResult res;
  res.draws.resize(K);
  std::atomic<std::uint64_t> fallbacks{0}, proposals{0}, accepted{0};

  for_each_index(K, exec, [&](std::size_t k) {
    RngStream rng = derive_stream(seed, StreamTag::kBackward, k);
    SmoothingDraw& d = res.draws[k];
    d.indices.assign(static_cast<std::size_t>(T) + 1, 0);
    d.log_weights.assign(static_cast<std::size_t>(T) + 1, 0.0);
    const auto& wT = tape.steps[T].log_weights;
    d.indices[T] = resample_indices(wT, 1, rng)[0];
    d.log_weights[T] = wT[d.indices[T]];
    Vector logw(N);
    for (int t = T - 1; t >= 0; --t) {
      const std::size_t next = d.indices[t + 1];
      const std::size_t lineage = tape.steps[t + 1].ancestors[next];
      const auto& vt = tape.steps[t].log_weights;
      if (mode == BackwardMode::kFull) {
        const auto terms = cached_terms(t, next, d.indices);
        for (std::size_t n = 0; n < N; ++n) {
          double lt = (*terms)[n];
          if (!cache_policy && lt != kNegInf) lt += policy_log_terms(tape, policy, params, t, n, d.indices);
          logw[n] = vt[n] + lt;
        }
        if (normalize_log_weights(logw) == kNegInf) {
          ++fallbacks;
          spdlog::warn("backward sampling: all smoothing weights are zero at step {}; keeping the lineage ancestor", t);
          d.indices[t] = lineage;
          d.log_weights[t] = kNegInf;
        } else {
          d.indices[t] = resample_indices(logw, 1, rng)[0];
          d.log_weights[t] = logw[d.indices[t]];
        }
      } else {
        const std::size_t prop = resample_indices(vt, 1, rng)[0];
        const double u = rng.uniform();  // drawn unconditionally to keep streams aligned
        ++proposals;
        double cur = smoothing_log_terms(tape, model, policy, params, t, lineage, d.indices);
        std::size_t chosen = lineage;
        double chosen_terms = cur;
        if (prop != lineage) {
          const double alt = smoothing_log_terms(tape, model, policy, params, t, prop, d.indices);
          const bool take = cur == kNegInf ? alt != kNegInf : (alt != kNegInf && std::log(u) < alt - cur);
          if (take) {
            chosen = prop;
            chosen_terms = alt;
            ++accepted;
          }
        }
        if (chosen_terms == kNegInf) {
          ++fallbacks;
          spdlog::warn("backward sampling: lineage ancestor and proposal both have zero weight at step {}", t);
        }
        d.indices[t] = chosen;
        d.log_weights[t] = vt[chosen] + chosen_terms;
      }
    }
    d.trajectory = tape.trajectory(d.indices);
    d.inputs = tape.inputs(d.indices);
  });
  res.diagnostics = {fallbacks.load(), proposals.load(), accepted.load()};
  return res;
}

std::vector<Trajectory> lineage_trace(const FilterTape& tape) {
  std::vector<Trajectory> out;
  out.reserve(tape.n_history);
  for (std::size_t n = 0; n < tape.n_history; ++n) out.push_back(tape.trajectory(tape.lineage(n)));
  return out;
}

DegeneracyReport degeneracy_report(const FilterTape& tape, std::span<const SmoothingDraw> draws) {
  const int T = tape.horizon();
  DegeneracyReport rep;
  rep.draws = draws.size();
  std::vector<std::set<std::size_t>> lin(static_cast<std::size_t>(T) + 1), bwd(static_cast<std::size_t>(T) + 1);
  for (std::size_t n = 0; n < tape.n_history; ++n) {
    const auto idx = tape.lineage(n);
    for (int t = 0; t <= T; ++t) lin[t].insert(idx[t]);
  }
  for (const auto& d : draws)
    for (int t = 0; t <= T; ++t) bwd[t].insert(d.indices[t]);
  for (int t = 0; t <= T; ++t) {
    rep.lineage_unique.push_back(lin[t].size());
    rep.backward_unique.push_back(bwd[t].size());
  }
  return rep;
}

}  // namespace p3o
