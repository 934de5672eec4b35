#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "p3o/enumeration.hpp"
#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"
#include "p3o/oracle.hpp"
#include "p3o/tabular_policy.hpp"

using namespace p3o;

namespace {

Trajectory prefix(std::vector<int> z, std::vector<int> a) {
  Trajectory t;
  for (int x : z) t.observations.push_back({double(x)});
  for (int x : a) t.actions.push_back({double(x)});
  return t;
}

}  // namespace

TEST_CASE("oracle tables validate row sums") {
  auto t = fixtures::tables_2x2x2(2);
  t.transition[0] = 0.9 + 1e-9;
  CHECK_THROWS_AS(DiscreteOraclePomdp{t}, ConfigError);
  t = fixtures::tables_2x2x2(2);
  t.observation[1] = -0.1;
  t.observation[0] = 1.1;
  CHECK_THROWS_AS(DiscreteOraclePomdp{t}, ConfigError);
  t = fixtures::tables_2x2x2(2);
  t.horizon = 4;
  CHECK_THROWS_AS(DiscreteOraclePomdp{t}, ConfigError);
  CHECK_NOTHROW(DiscreteOraclePomdp{fixtures::tables_2x2x2(3)});
}

TEST_CASE("oracle text format round-trips") {
  const auto o = make_oracle_2x2x2(2);
  std::stringstream ss;
  o.write(ss);
  const auto back = DiscreteOraclePomdp::parse(ss);
  CHECK(back.tables().transition == o.tables().transition);
  CHECK(back.tables().observation == o.tables().observation);
  CHECK(back.tables().reward == o.tables().reward);
  CHECK(back.horizon() == 2);
  CHECK(back.reward_bound() == doctest::Approx(1.0));

  std::istringstream missing("states 2\nactions 1\nobservations 2\nhorizon 1\ninitial 0.5 0.5\n"
                             "transition 0 0 : 1 0\nobservation 0 : 1 0\nobservation 1 : 0 1\n"
                             "reward 0 : 0 0\n");
  CHECK_THROWS_AS(DiscreteOraclePomdp::parse(missing), ConfigError);
  std::istringstream bad_sum("states 1\nactions 1\nobservations 1\nhorizon 1\ninitial 0.5\n"
                             "transition 0 0 : 1\nobservation 0 : 1\nreward 0 : 0\n");
  CHECK_THROWS_AS(DiscreteOraclePomdp::parse(bad_sum), ConfigError);
}

TEST_CASE("oracle densities normalize and match sampling") {
  const auto o = make_oracle_2x2x2(2);
  for (double s : {0.0, 1.0})
    for (double a : {0.0, 1.0}) {
      double tot = 0;
      for (double n : {0.0, 1.0}) tot += std::exp(o.transition_logdensity(Vector{n}, Vector{s}, Vector{a}));
      CHECK(tot == doctest::Approx(1.0).epsilon(1e-14));
    }
  RngStream rng(5, 1);
  const int n = 100000;
  int ones = 0;
  Vector next(1);
  for (int i = 0; i < n; ++i) {
    o.transition_sample(Vector{0.0}, Vector{1.0}, rng, next);
    ones += next[0] == 1.0;
  }
  const double p = o.f(1, 0, 1);
  CHECK(std::abs(ones / double(n) - p) < 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("enumerate_belief") {
  const auto o = make_oracle_2x2x2(2);
  SUBCASE("Bayes rule on z0 = 0") {
    const auto b = enumerate_belief(o, prefix({0}, {}));
    CHECK(b[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("identical observation rows give the prior predictive") {
    const auto flat = fixtures::with_observation(o.tables(), {0.3, 0.7, 0.3, 0.7});
    const auto b = enumerate_belief(flat, prefix({1, 0}, {1}));
    CHECK(b[0] == doctest::Approx(0.5 * 0.2 + 0.5 * 0.8));
    CHECK(b[1] == doctest::Approx(0.5 * 0.8 + 0.5 * 0.2));
  }
  SUBCASE("identity observations give a point mass") {
    const auto ident = fixtures::with_observation(o.tables(), {1, 0, 0, 1});
    const auto b = enumerate_belief(ident, prefix({0, 1}, {0}));
    CHECK(b[0] == 0.0);
    CHECK(b[1] == 1.0);
    CHECK_THROWS_AS(enumerate_belief(ident, prefix({0, 1}, {5})), std::invalid_argument);
  }
  SUBCASE("impossible prefix is signalled") {
    auto t = o.tables();
    t.observation = {1, 0, 1, 0};
    const DiscreteOraclePomdp never_one(t);
    try {
      enumerate_belief(never_one, prefix({1}, {}));
      FAIL("expected an impossible-history error");
    } catch (const NumericError& e) {
      CHECK(e.kind() == NumericError::Kind::kImpossibleHistory);
    }
  }
  SUBCASE("deterministic") {
    const auto b1 = enumerate_belief(o, prefix({0, 1, 1}, {1, 0}));
    const auto b2 = enumerate_belief(o, prefix({0, 1, 1}, {1, 0}));
    CHECK(b1 == b2);
  }
}

TEST_CASE("risk objective special cases") {
  const auto base = make_oracle_2x2x2(2);
  const TabularSoftmaxPolicy pi(2, 2, 2);
  const Vector params = pi.initial_params(17);
  const auto zero = fixtures::with_reward(base.tables(), {0, 0, 0, 0});
  CHECK(enumerate_risk_objective(zero, pi, params, 0.7) == doctest::Approx(0.0).epsilon(1e-14));
  const auto constant = fixtures::with_reward(base.tables(), {0.3, 0.3, 0.3, 0.3});
  for (double eta : {0.1, 1.0, 5.0})
    CHECK(enumerate_risk_objective(constant, pi, params, eta) ==
          doctest::Approx(2 * 0.3).epsilon(1e-12));
  CHECK(enumerate_risk_objective(base, pi, params, 1.0) ==
        enumerate_risk_objective(base, pi, params, 1.0));
  const auto e = enumerate_trajectories(base, pi, params, 1.0);
  CHECK(e.histories.size() == 32);
  double total = 0;
  for (const auto& h : e.histories) total += std::exp(h.log_psi);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("risk objective agrees with naive Monte Carlo") {
  // Simulate the state-space process from the tables, score each history by
  // its exact beliefs, and average exp(eta * sum ell).
  const auto o = make_oracle_2x2x2(2);
  const TabularSoftmaxPolicy pi(2, 2, 2);
  const Vector params = pi.initial_params(3);
  const double eta = 1.0;
  const double exact = enumerate_risk_objective(o, pi, params, eta);
  RngStream rng(2024, 1);
  const int n = 1000000;
  double s = 0, s2 = 0;
  Vector st(1), z(1), a(1), next(1);
  for (int i = 0; i < n; ++i) {
    Trajectory tr;
    o.sample_initial(rng, st);
    o.observation_sample(st, rng, z);
    tr.observations.push_back(z);
    PolicyState ps = pi.initial_state();
    pi.observe(params, ps, history_input(z, {}, 1));
    double total = 0;
    for (int t = 0; t < 2; ++t) {
      pi.sample(params, ps, rng, a);
      o.transition_sample(st, a, rng, next);
      st = next;
      o.observation_sample(st, rng, z);
      tr.actions.push_back(a);
      tr.observations.push_back(z);
      const auto b = enumerate_belief(o, tr);
      total += b[0] * o.r(0, std::size_t(a[0])) + b[1] * o.r(1, std::size_t(a[0]));
      if (t == 0) pi.observe(params, ps, history_input(z, a, 1));
    }
    const double w = std::exp(eta * total);
    s += w;
    s2 += w * w;
  }
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - std::exp(eta * exact)) < 3 * se);
}

TEST_CASE("risk gradient matches finite differences") {
  const auto o = make_oracle_2x2x2(2);
  const TabularSoftmaxPolicy pi(2, 2, 2);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Vector params = pi.initial_params(seed);
    for (double eta : {0.5, 1.0, 3.0}) {
      const auto g = enumerate_risk_gradient(o, pi, params, eta);
      const auto fd = finite_difference_risk_gradient(o, pi, params, eta);
      double err = 0;
      for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(g[i] - fd[i]));
      CHECK(err <= 1e-8 * (1 + fixtures::max_abs(g)));
    }
  }
}

TEST_CASE("risk gradient special cases") {
  const auto base = make_oracle_2x2x2(1);
  const TabularSoftmaxPolicy pi(2, 2, 1);
  const Vector params = pi.initial_params(9);
  SUBCASE("uniform rewards give a zero gradient") {
    const auto flat = fixtures::with_reward(base.tables(), {0.4, 0.4, 0.4, 0.4});
    CHECK(fixtures::max_abs(enumerate_risk_gradient(flat, pi, params, 1.0)) < 1e-14);
  }
  SUBCASE("dominating action gains probability") {
    // Action 1 pays 1 in every state, action 0 pays nothing.
    const auto dom = fixtures::with_reward(base.tables(), {0, 0, 1, 1});
    const auto g = enumerate_risk_gradient(dom, pi, params, 1.0);
    const auto fd = finite_difference_risk_gradient(dom, pi, params, 1.0);
    for (std::size_t row = 0; row < 2; ++row) {
      CHECK(g[2 * row + 1] > 0);
      CHECK(g[2 * row] < 0);
      CHECK(fd[2 * row + 1] > 0);
    }
  }
  SUBCASE("small eta recovers the risk-neutral direction") {
    const auto o2 = make_oracle_2x2x2(2);
    const TabularSoftmaxPolicy pi2(2, 2, 2);
    const Vector p2 = pi2.initial_params(4);
    const auto g = enumerate_risk_gradient(o2, pi2, p2, 1e-8);
    const auto rn = enumerate_risk_neutral_gradient(o2, pi2, p2);
    CHECK(1 - fixtures::cosine(g, rn) < 1e-4);
  }
}

TEST_CASE("risk-neutral gradient matches finite differences of the expected return") {
  const auto o = make_oracle_2x2x2(2);
  const TabularSoftmaxPolicy pi(2, 2, 2);
  Vector p = pi.initial_params(8);
  const auto g = enumerate_risk_neutral_gradient(o, pi, p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    p[i] = x + 1e-5;
    const double up = enumerate_expected_return(o, pi, p);
    p[i] = x - 1e-5;
    const double dn = enumerate_expected_return(o, pi, p);
    p[i] = x;
    CHECK(g[i] == doctest::Approx((up - dn) / 2e-5).epsilon(1e-7));
  }
}

TEST_CASE("soft-value decomposition of the tilted target") {
  for (int T : {1, 2, 3}) {
    const auto o = make_oracle_2x2x2(T);
    const TabularSoftmaxPolicy pi(2, 2, T);
    const Vector params = pi.initial_params(21);
    const auto c = check_remark_decomposition(o, pi, params, 1.0);
    CHECK(c.holds);
    CHECK(c.max_deviation <= 1e-10);
    // Without the prior-policy factor the identity fails for a non-uniform policy.
    CHECK(c.max_deviation_literal > 1e-3);
    const auto uniform = pi.initial_params(0);
    CHECK(check_remark_decomposition(o, pi, uniform, 1.0).max_deviation_literal <= 1e-10);
  }
  SUBCASE("zero utilities leave the prior process") {
    const auto o = fixtures::with_reward(fixtures::tables_2x2x2(2), {0, 0, 0, 0});
    const TabularSoftmaxPolicy pi(2, 2, 2);
    const auto params = pi.initial_params(5);
    const auto e = enumerate_trajectories(o, pi, params, 1.0);
    for (const auto& h : e.histories) CHECK(h.log_psi == doctest::Approx(h.log_prior).epsilon(1e-13));
    CHECK(verify_remark_decomposition(o, pi, params, 1.0));
  }
  SUBCASE("deterministic observations") {
    const auto o = fixtures::with_observation(fixtures::tables_2x2x2(2), {1, 0, 0, 1});
    const TabularSoftmaxPolicy pi(2, 2, 2);
    CHECK(verify_remark_decomposition(o, pi, pi.initial_params(6), 2.0));
  }
}
