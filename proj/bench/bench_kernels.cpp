// Serial reference against the OpenMP kernels. Both paths produce identical
// results; only the wall time differs. Run with OMP_NUM_THREADS set to the
// core count to see the parallel speedup.

#include <benchmark/benchmark.h>

#include "p3o/backward_sampler.hpp"
#include "p3o/environments.hpp"
#include "p3o/gradient.hpp"
#include "p3o/harness.hpp"
#include "p3o/nested_smc.hpp"
#include "p3o/neural_policy.hpp"

using namespace p3o;

namespace {

Execution exec_of(const benchmark::State& state) {
  return state.range(0) ? Execution::kParallel : Execution::kSerial;
}

struct LightDarkSetup {
  std::unique_ptr<PomdpModel> model = make_model("lightdark");
  NeuralPolicy policy;
  Vector params;

  LightDarkSetup()
      : policy([] {
          auto a = NeuralArchitecture::defaults(InputMode::kBelief, belief_feature_dim(2), 2, Vector(2, 1.0));
          a.decoder = {64, 64};
          return a;
        }()),
        params(policy.initial_params(1)) {}
};

NestedSmcConfig filter_config(Execution exec) {
  NestedSmcConfig c;
  c.n_history = 128;
  c.n_belief = 32;
  c.eta = 0.1;
  c.seed = 3;
  c.execution = exec;
  return c;
}

void BM_NestedFilter(benchmark::State& state) {
  const LightDarkSetup s;
  const auto c = filter_config(exec_of(state));
  for (auto _ : state) benchmark::DoNotOptimize(run_nested_filter(*s.model, s.policy, s.params, c).log_normalizer);
}

void BM_BackwardTwoAncestor(benchmark::State& state) {
  const LightDarkSetup s;
  const auto res = run_nested_filter(*s.model, s.policy, s.params, filter_config(Execution::kParallel));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        backward_sample(res.tape, *s.model, s.policy, s.params, 128, BackwardMode::kTwoAncestor, 5, exec_of(state))
            .draws.size());
}

void BM_BackwardFull(benchmark::State& state) {
  const LightDarkSetup s;
  auto c = filter_config(Execution::kParallel);
  c.n_history = 32;
  c.n_belief = 16;
  const auto res = run_nested_filter(*s.model, s.policy, s.params, c);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        backward_sample(res.tape, *s.model, s.policy, s.params, 16, BackwardMode::kFull, 5, exec_of(state))
            .draws.size());
}

void BM_Gradient(benchmark::State& state) {
  const LightDarkSetup s;
  const auto res = run_nested_filter(*s.model, s.policy, s.params, filter_config(Execution::kParallel));
  const auto samples = samples_from_particles(res);
  for (auto _ : state)
    benchmark::DoNotOptimize(p3o_gradient(s.policy, s.params, samples, true, exec_of(state)).ess);
}

void BM_Evaluate(benchmark::State& state) {
  const LightDarkSetup s;
  EvalOptions eo;
  eo.rollouts = 256;
  eo.n_belief = 32;
  eo.seed = 4;
  eo.execution = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(*s.model, s.policy, s.params, eo).mean_return);
}

}  // namespace

// Argument 0 is the serial reference, 1 the OpenMP path.
BENCHMARK(BM_NestedFilter)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardTwoAncestor)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardFull)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
