#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "p3o/belief_filter.hpp"
#include "p3o/enumeration.hpp"
#include "p3o/environments.hpp"
#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

using namespace p3o;

namespace {

BeliefParticles two_particles(double w0, double w1) {
  BeliefParticles b;
  b.dim = 1;
  b.states = {0.0, 1.0};
  b.log_weights = {std::log(w0), std::log(w1)};
  return b;
}

// |S| = 2 oracle whose transitions keep the state for both actions.
DiscreteOraclePomdp identity_oracle() {
  auto t = fixtures::tables_2x2x2(2);
  t.transition = {1, 0, 0, 1, 1, 0, 0, 1};
  return DiscreteOraclePomdp(t);
}

double sum_weights(const BeliefParticles& b) {
  double s = 0.0;
  for (double lw : b.log_weights) s += std::exp(lw);
  return s;
}

Vector state_frequencies(const BeliefParticles& b, std::size_t S) {
  Vector f(S, 0.0);
  for (std::size_t m = 0; m < b.size(); ++m) f[static_cast<std::size_t>(b.state(m)[0])] += std::exp(b.log_weights[m]);
  return f;
}

}  // namespace

TEST_CASE("init_belief") {
  const auto oracle = make_oracle_2x2x2(2);
  RngStream rng(1, 2);
  const auto one = init_belief(oracle, 1, rng);
  CHECK(one.size() == 1);
  CHECK(one.log_weights[0] == 0.0);
  CHECK_THROWS_AS(init_belief(oracle, 0, rng), ConfigError);

  auto t = fixtures::tables_2x2x2(2);
  t.initial = {0.3, 0.7};
  const DiscreteOraclePomdp skewed(t);
  const std::size_t M = 100000;
  const auto b = init_belief(skewed, M, rng);
  const auto f = state_frequencies(b, 2);
  CHECK(std::abs(f[1] - 0.7) <= 3.0 * std::sqrt(0.21 / M));
  CHECK(sum_weights(b) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("propagate") {
  RngStream rng(3, 4);
  // Deterministic identity transitions leave the states unchanged.
  const auto id = identity_oracle();
  auto b = init_belief(id, 50, rng);
  const Vector before = b.states;
  propagate(b, Vector{1.0}, id, rng);
  CHECK(b.states == before);

  // Oracle one-step frequencies match the transition row.
  const auto oracle = make_oracle_2x2x2(2);
  BeliefParticles c;
  c.dim = 1;
  const std::size_t M = 100000;
  c.states.assign(M, 0.0);
  c.log_weights.assign(M, -std::log(double(M)));
  propagate(c, Vector{1.0}, oracle, rng);
  const auto f = state_frequencies(c, 2);
  const double p = oracle.f(1, 0, 1);
  CHECK(std::abs(f[1] - p) <= 3.0 * std::sqrt(p * (1 - p) / M));

  // Linear-Gaussian one-step mean.
  LinearGaussianModel::Params lp;
  lp.a = 0.8;
  lp.b = 0.5;
  const LinearGaussianModel lg(lp);
  const std::size_t K = 10000;
  auto g = init_belief(lg, K, rng);
  double m0 = 0.0;
  for (std::size_t m = 0; m < K; ++m) m0 += g.state(m)[0] / K;
  propagate(g, Vector{0.6}, lg, rng);
  double m1 = 0.0;
  for (std::size_t m = 0; m < K; ++m) m1 += g.state(m)[0] / K;
  // Conditional on the initial draws the step adds N(0, q^2) noise.
  CHECK(std::abs(m1 - (0.8 * m0 + 0.5 * 0.6)) <= 4.0 * lp.q / std::sqrt(double(K)));
}

TEST_CASE("propagate: non-finite state signals model divergence") {
  struct Exploding final : PomdpModel {
    std::string name() const override { return "exploding"; }
    std::size_t state_dim() const override { return 1; }
    std::size_t action_dim() const override { return 1; }
    std::size_t obs_dim() const override { return 1; }
    int horizon() const override { return 1; }
    void sample_initial(RngStream&, MutSpan s) const override { s[0] = 0.0; }
    void transition_sample(ConstSpan, ConstSpan, RngStream&, MutSpan n) const override { n[0] = std::nan(""); }
    double transition_logdensity(ConstSpan, ConstSpan, ConstSpan) const override { return 0.0; }
    void observation_sample(ConstSpan, RngStream&, MutSpan z) const override { z[0] = 0.0; }
    double observation_logdensity(ConstSpan, ConstSpan) const override { return 0.0; }
    double reward(ConstSpan, ConstSpan, int) const override { return 0.0; }
    double reward_bound() const override { return 1.0; }
  } model;
  RngStream rng(1, 1);
  auto b = init_belief(model, 3, rng);
  try {
    propagate(b, Vector{0.0}, model, rng);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(e.kind() == NumericError::Kind::kModelDivergence);
    CHECK(e.index() == 0);
  }
}

TEST_CASE("reweight") {
  // Hand example: prior (1/2, 1/2), likelihoods (0.2, 0.6).
  auto t = fixtures::tables_2x2x2(2);
  t.observation = {0.2, 0.8, 0.6, 0.4};
  const DiscreteOraclePomdp model(t);
  auto b = two_particles(0.5, 0.5);
  reweight(b, Vector{0.0}, model);
  CHECK(std::exp(b.log_weights[0]) == doctest::Approx(0.25));
  CHECK(std::exp(b.log_weights[1]) == doctest::Approx(0.75));
  CHECK(b.log_norm_increment == doctest::Approx(std::log(0.4)));
  CHECK(sum_weights(b) == doctest::Approx(1.0).epsilon(1e-10));

  // Constant likelihood: weights unchanged.
  const auto flat = fixtures::with_observation(fixtures::tables_2x2x2(2), {0.5, 0.5, 0.5, 0.5});
  auto c = two_particles(0.3, 0.7);
  reweight(c, Vector{1.0}, flat);
  CHECK(std::exp(c.log_weights[0]) == doctest::Approx(0.3));

  // Zero likelihood everywhere: belief collapse.
  const auto det = fixtures::with_observation(fixtures::tables_2x2x2(2), {1, 0, 1, 0});
  auto d = two_particles(0.5, 0.5);
  CHECK_THROWS_AS(reweight(d, Vector{1.0}, det), NumericError);

  // Exact belief vs. a large particle belief.
  const auto oracle = make_oracle_2x2x2(2);
  Trajectory prefix;
  prefix.observations = {{0.0}};
  const auto exact = enumerate_belief(oracle, prefix);
  RngStream rng(8, 8);
  auto big = init_belief(oracle, 100000, rng);
  reweight(big, Vector{0.0}, oracle);
  const auto f = state_frequencies(big, 2);
  CHECK(0.5 * (std::abs(f[0] - exact[0]) + std::abs(f[1] - exact[1])) <= 0.01);
}

TEST_CASE("expected_reward") {
  const auto constant = fixtures::with_reward(fixtures::tables_2x2x2(2), Vector(4, 0.4));
  auto b = two_particles(0.2, 0.8);
  CHECK(expected_reward(b, Vector{1.0}, 1, constant) == doctest::Approx(0.4));

  const auto oracle = make_oracle_2x2x2(2);
  BeliefParticles point;
  point.dim = 1;
  point.states = {1.0};
  point.log_weights = {0.0};
  CHECK(expected_reward(point, Vector{0.0}, 1, oracle) == oracle.r(1, 0));

  // Particle estimate vs. exact expectation under the enumerated belief.
  Trajectory prefix;
  prefix.observations = {{1.0}, {0.0}};
  prefix.actions = {{1.0}};
  const auto exact = enumerate_belief(oracle, prefix);
  const double truth = exact[0] * oracle.r(0, 1) + exact[1] * oracle.r(1, 1);
  const std::size_t M = 10000;
  RngStream rng(5, 5);
  auto pb = init_belief(oracle, M, rng);
  reweight(pb, Vector{1.0}, oracle);
  resample_belief(pb, rng);
  propagate(pb, Vector{1.0}, oracle, rng);
  reweight(pb, Vector{0.0}, oracle);
  CHECK(std::abs(expected_reward(pb, Vector{1.0}, 1, oracle) - truth) <= 3.0 * oracle.reward_bound() / std::sqrt(double(M)));
}

TEST_CASE("sample_predictive_observation") {
  const auto oracle = make_oracle_2x2x2(2);
  RngStream rng(6, 6);
  // M = 1: the draw follows g(. | s) exactly.
  BeliefParticles one;
  one.dim = 1;
  one.states = {1.0};
  one.log_weights = {0.0};
  const int K = 100000;
  int zeros = 0;
  for (int k = 0; k < K; ++k) {
    Vector z(1);
    sample_predictive_observation(one, oracle, rng, z);
    zeros += z[0] == 0.0;
  }
  const double p1 = oracle.g(0, 1);
  CHECK(std::abs(double(zeros) / K - p1) <= 3.0 * std::sqrt(p1 * (1 - p1) / K));

  // Weighted mixture.
  auto b = two_particles(0.3, 0.7);
  zeros = 0;
  for (int k = 0; k < K; ++k) {
    Vector z(1);
    sample_predictive_observation(b, oracle, rng, z);
    zeros += z[0] == 0.0;
  }
  const double mix = 0.3 * oracle.g(0, 0) + 0.7 * oracle.g(0, 1);
  CHECK(std::abs(double(zeros) / K - mix) <= 3.0 * std::sqrt(mix * (1 - mix) / K));

  // Two identical particles behave like one, whatever the weights.
  BeliefParticles same;
  same.dim = 1;
  same.states = {1.0, 1.0};
  same.log_weights = {std::log(0.9), std::log(0.1)};
  zeros = 0;
  for (int k = 0; k < K; ++k) {
    Vector z(1);
    sample_predictive_observation(same, oracle, rng, z);
    zeros += z[0] == 0.0;
  }
  CHECK(std::abs(double(zeros) / K - p1) <= 3.0 * std::sqrt(p1 * (1 - p1) / K));
}

TEST_CASE("resampling") {
  RngStream rng(9, 9);
  // Uniform weights: offspring indices are uniform.
  const std::size_t M = 8;
  Vector uniform(M, -std::log(double(M)));
  Vector counts(M, 0.0);
  const int reps = 20000;
  for (int r = 0; r < reps; ++r)
    for (auto i : resample_indices(uniform, M, rng)) counts[i] += 1.0;
  const double n = reps * double(M), p = 1.0 / M;
  for (double c : counts) CHECK(std::abs(c / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n) * 1.5);

  // One-hot weights.
  Vector onehot{0.0, kNegInf, kNegInf};
  for (auto i : resample_indices(onehot, 10, rng)) CHECK(i == 0);

  // (0.7, 0.3): offspring counts within binomial 3 sigma.
  Vector w{std::log(0.7), std::log(0.3)};
  double first = 0.0;
  for (int r = 0; r < 100000; ++r) first += resample_indices(w, 1, rng)[0] == 0;
  CHECK(std::abs(first / 1e5 - 0.7) <= 3.0 * std::sqrt(0.21 / 1e5));

  // Systematic resampling keeps counts within one of the expectation.
  Vector sys{std::log(0.5), std::log(0.25), std::log(0.25)};
  for (int r = 0; r < 100; ++r) {
    Vector c(3, 0.0);
    for (auto i : resample_indices(sys, 8, rng, ResampleScheme::kSystematic)) c[i] += 1;
    CHECK(std::abs(c[0] - 4.0) <= 1.0);
  }

  // Resampling resets weights and preserves the mean of a test function.
  auto b = two_particles(0.2, 0.8);
  double mean = 0.0;
  for (int r = 0; r < 20000; ++r) {
    auto c = b;
    resample_belief(c, rng);
    CHECK(c.log_weights[0] == doctest::Approx(-std::log(2.0)));
    mean += (c.state(0)[0] + c.state(1)[0]) / 2.0 / 20000;
  }
  CHECK(std::abs(mean - 0.8) <= 3.0 * std::sqrt(0.16 / 2 / 20000));

  CHECK_THROWS_AS(resample_indices(Vector{kNegInf, kNegInf}, 2, rng), NumericError);
}

TEST_CASE("bootstrap filter: marginal likelihood is unbiased on the oracle") {
  const auto oracle = make_oracle_2x2x2(3);
  const Trajectory traj{{{0.0}, {1.0}, {1.0}, {0.0}}, {{1.0}, {0.0}, {1.0}}};
  // Enumerated p(z_{0:T} | a_{0:T-1}) by the forward recursion.
  Vector alpha(2);
  for (std::size_t s = 0; s < 2; ++s) alpha[s] = oracle.p0(s) * oracle.g(0, s);
  for (std::size_t t = 0; t < 3; ++t) {
    Vector next(2, 0.0);
    const auto a = static_cast<std::size_t>(traj.actions[t][0]);
    const auto z = static_cast<std::size_t>(traj.observations[t + 1][0]);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t s2 = 0; s2 < 2; ++s2) next[s2] += alpha[s] * oracle.f(s2, s, a);
    for (std::size_t s2 = 0; s2 < 2; ++s2) next[s2] *= oracle.g(z, s2);
    alpha = next;
  }
  const double truth = alpha[0] + alpha[1];

  const int runs = 10000;
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < runs; ++r) {
    RngStream rng(100 + r, 1);
    auto b = init_belief(oracle, 4, rng);
    reweight(b, traj.observations[0], oracle);
    double logz = b.log_norm_increment;
    for (std::size_t t = 0; t < 3; ++t) {
      resample_belief(b, rng);
      propagate(b, traj.actions[t], oracle, rng);
      reweight(b, traj.observations[t + 1], oracle);
      logz += b.log_norm_increment;
    }
    const double z = std::exp(logz);
    s += z;
    s2 += z * z;
  }
  const double mean = s / runs, se = std::sqrt((s2 / runs - mean * mean) / runs);
  CHECK(std::abs(mean - truth) <= 3.0 * se);
}

TEST_CASE("bootstrap filter tracks the Kalman filter") {
  LinearGaussianModel::Params p;
  p.horizon = 100;
  const LinearGaussianModel model(p);
  KalmanFilter kf(p);
  RngStream rng(42, 0), sim(42, 1);
  const std::size_t M = 1000;
  auto b = init_belief(model, M, rng);
  Vector s(1), z(1);
  model.sample_initial(sim, s);
  double se = 0.0, var = 0.0;
  for (int t = 0; t <= 100; ++t) {
    if (t > 0) {
      const Vector a{0.5 * std::sin(0.3 * t)};
      Vector next(1);
      model.transition_sample(s, a, sim, next);
      s = next;
      resample_belief(b, rng);
      propagate(b, a, model, rng);
      kf.predict(a);
    }
    model.observation_sample(s, sim, z);
    reweight(b, z, model);
    kf.update(z);
    CHECK(sum_weights(b) == doctest::Approx(1.0).epsilon(1e-10));
    const auto mom = belief_moments(b);
    se += (mom.mean[0] - kf.mean()[0]) * (mom.mean[0] - kf.mean()[0]);
    var += kf.covariance()[0];
  }
  const double rmse = std::sqrt(se / 101), post_std = std::sqrt(var / 101);
  CHECK(rmse <= 0.1 * post_std);
}

TEST_CASE("exact inner belief agrees with enumeration") {
  const auto oracle = make_oracle_2x2x2(2);
  auto b = init_exact_belief(oracle);
  reweight(b, Vector{1.0}, oracle);
  propagate_exact(b, Vector{0.0}, oracle);
  reweight(b, Vector{0.0}, oracle);
  Trajectory prefix{{{1.0}, {0.0}}, {{0.0}}};
  const auto exact = enumerate_belief(oracle, prefix);
  CHECK(std::exp(b.log_weights[0]) == doctest::Approx(exact[0]).epsilon(1e-12));
  CHECK(std::exp(b.log_weights[1]) == doctest::Approx(exact[1]).epsilon(1e-12));
}

TEST_CASE("belief moments and eigenvalue") {
  BeliefParticles b;
  b.dim = 2;
  b.states = {0.0, 0.0, 2.0, 0.0};
  b.log_weights = {std::log(0.5), std::log(0.5)};
  const auto mom = belief_moments(b);
  CHECK(mom.mean[0] == doctest::Approx(1.0));
  CHECK(mom.covariance[0] == doctest::Approx(1.0));
  CHECK(mom.covariance[3] == doctest::Approx(0.0));
  CHECK(belief_max_eigenvalue(b) == doctest::Approx(1.0));
  CHECK(belief_ess(b) == doctest::Approx(2.0));
}
