#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p3o/nested_smc.hpp"

namespace p3o {

/// kFull computes smoothing weights for all N candidates per step.
/// kTwoAncestor runs one independent Metropolis-Hastings step per time step:
/// start at the lineage ancestor, propose from the filtering weights, and
/// compare only those two candidates.
enum class BackwardMode { kFull, kTwoAncestor };

const char* to_string(BackwardMode m);
BackwardMode parse_backward_mode(const std::string& s);

struct SmoothingDraw {
  Trajectory trajectory;
  std::vector<std::size_t> indices;  // S_t for t = 0..T
  /// Full mode: normalized log smoothing weight of the chosen index (at T the
  /// terminal filtering weight). Two-ancestor mode: log v_t plus the log
  /// ancestor-specific terms of the chosen index.
  Vector log_weights;
  std::vector<Vector> inputs;  // policy inputs along the draw, t = 0..T-1
};

struct BackwardDiagnostics {
  std::uint64_t fallbacks = 0;  // steps where every smoothing weight was zero
  std::uint64_t proposals = 0;  // two-ancestor mode only
  std::uint64_t accepted = 0;   // proposals that moved off the lineage ancestor
};

struct BackwardResult {
  std::vector<SmoothingDraw> draws;
  BackwardDiagnostics diagnostics;
};

/// Log of the terms of the smoothing weight that depend on candidate n at
/// step t, given the already-drawn future indices[t+1..T]:
///   sum_{s=t}^{T-1} log pi(a_s | spliced history)
///   + sum_m log sum_k w_t^{nk} f(s_{t+1}^m | s_t^{nk}, a_t).
/// Policies that are Markov in their input only contribute the s = t term.
/// Requires tape.policy_states for non-Markov policies.
double smoothing_log_terms(const FilterTape& tape, const PomdpModel& model, const Policy& policy,
                           ConstSpan params, int t, std::size_t n,
                           std::span<const std::size_t> indices);

/// Marginalized belief-transition term alone (the second sum above).
double belief_transition_logprob(const FilterTape& tape, const PomdpModel& model, int t,
                                 std::size_t n, std::size_t next);

/// K backward-sampled trajectories from the tape. Draw k uses stream
/// (kBackward, k) of `seed`. Throws ConfigError for tapes with exact inner
/// beliefs or missing policy states, NumericError(kInvalidModel) on a NaN or
/// +inf transition log-density. When every smoothing weight at a step is zero
/// the draw keeps the lineage ancestor and a warning is logged.
BackwardResult backward_sample(const FilterTape& tape, const PomdpModel& model, const Policy& policy,
                               ConstSpan params, std::size_t K, BackwardMode mode,
                               std::uint64_t seed, Execution exec = Execution::kParallel);

/// Plain genealogical trajectories of all N terminal particles.
std::vector<Trajectory> lineage_trace(const FilterTape& tape);

/// Unique particle indices per step among the N lineages and among the draws.
struct DegeneracyReport {
  std::vector<std::size_t> lineage_unique;   // t = 0..T
  std::vector<std::size_t> backward_unique;  // t = 0..T
  std::size_t draws = 0;
};
DegeneracyReport degeneracy_report(const FilterTape& tape, std::span<const SmoothingDraw> draws);

}  // namespace p3o
