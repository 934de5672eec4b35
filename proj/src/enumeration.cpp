#include "p3o/enumeration.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

namespace {

using Belief = Vector;

/// Unnormalized update b'(s) g(z|s); returns log of its mass and normalizes.
double condition_on(const DiscreteOraclePomdp& o, Belief& b, std::size_t z) {
  double mass = 0.0;
  for (std::size_t s = 0; s < b.size(); ++s) mass += (b[s] *= o.g(z, s));
  if (!(mass > 0.0)) return kNegInf;
  for (double& x : b) x /= mass;
  return std::log(mass);
}

Belief predict(const DiscreteOraclePomdp& o, const Belief& b, std::size_t a) {
  Belief out(b.size(), 0.0);
  for (std::size_t s = 0; s < b.size(); ++s)
    if (b[s] > 0.0)
      for (std::size_t n = 0; n < b.size(); ++n) out[n] += b[s] * o.f(n, s, a);
  return out;
}

double expected_reward(const DiscreteOraclePomdp& o, const Belief& b, std::size_t a) {
  double r = 0.0;
  for (std::size_t s = 0; s < b.size(); ++s) r += b[s] * o.r(s, a);
  return r;
}

Belief prior_belief(const DiscreteOraclePomdp& o) {
  Belief b(o.num_states());
  for (std::size_t s = 0; s < b.size(); ++s) b[s] = o.p0(s);
  return b;
}

void check_policy(const DiscreteOraclePomdp& oracle, const Policy& policy) {
  if (policy.action_dim() != 1 || policy.input_mode() != InputMode::kHistory)
    throw ConfigError("enumeration needs a history-mode policy over discrete action indices");
  (void)oracle;
}

/// Depth-first walk over all positive-probability histories. The visitor sees
/// each complete history with its log prior and utilities.
struct Walker {
  const DiscreteOraclePomdp& o;
  const Policy& policy;
  ConstSpan params;
  std::function<void(const Trajectory&, double, const Vector&)> visit;

  void run() {
    const auto Z = o.num_observations();
    for (std::size_t z = 0; z < Z; ++z) {
      Belief b = prior_belief(o);
      const double lz = condition_on(o, b, z);
      if (lz == kNegInf) continue;
      Trajectory traj;
      traj.observations.push_back({static_cast<double>(z)});
      PolicyState ps = policy.initial_state();
      policy.observe(params, ps, history_input(traj.observations[0], {}, 1));
      Vector utilities;
      descend(traj, b, ps, lz, utilities);
    }
  }

  void descend(Trajectory& traj, const Belief& b, const PolicyState& ps, double log_prior,
               Vector& utilities) {
    const int t = static_cast<int>(traj.actions.size());
    if (t == o.horizon()) {
      visit(traj, log_prior, utilities);
      return;
    }
    for (std::size_t a = 0; a < o.num_actions(); ++a) {
      const Vector act{static_cast<double>(a)};
      const double la = policy.log_prob(params, ps, act);
      if (la == kNegInf) continue;
      const Belief pred = predict(o, b, a);
      for (std::size_t z = 0; z < o.num_observations(); ++z) {
        Belief post = pred;
        const double lz = condition_on(o, post, z);
        if (lz == kNegInf) continue;
        traj.actions.push_back(act);
        traj.observations.push_back({static_cast<double>(z)});
        utilities.push_back(expected_reward(o, post, a));
        PolicyState next = ps;
        if (t + 1 < o.horizon())
          policy.observe(params, next, history_input(traj.observations.back(), act, 1));
        descend(traj, post, next, log_prior + la + lz, utilities);
        utilities.pop_back();
        traj.observations.pop_back();
        traj.actions.pop_back();
      }
    }
  }
};

}  // namespace

Vector enumerate_belief(const DiscreteOraclePomdp& oracle, const Trajectory& prefix) {
  if (!prefix.consistent()) throw ConfigError("belief prefix needs one more observation than actions");
  Belief b = prior_belief(oracle);
  for (std::size_t t = 0; t < prefix.observations.size(); ++t) {
    if (t > 0) b = predict(oracle, b, discrete_index(prefix.actions[t - 1], oracle.num_actions()));
    const auto z = discrete_index(prefix.observations[t], oracle.num_observations());
    if (condition_on(oracle, b, z) == kNegInf)
      throw NumericError(NumericError::Kind::kImpossibleHistory,
                         "history has zero likelihood at step " + std::to_string(t),
                         static_cast<long>(t));
  }
  return b;
}

Enumeration enumerate_trajectories(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                   ConstSpan params, double eta) {
  check_policy(oracle, policy);
  Enumeration e;
  e.eta = eta;
  Walker w{oracle, policy, params, [&](const Trajectory& traj, double lp, const Vector& u) {
             EnumeratedHistory h;
             h.trajectory = traj;
             h.log_prior = lp;
             h.utilities = u;
             for (double x : u) h.total_utility += x;
             e.histories.push_back(std::move(h));
           }};
  w.run();
  Vector tilted(e.histories.size());
  for (std::size_t i = 0; i < tilted.size(); ++i)
    tilted[i] = e.histories[i].log_prior + eta * e.histories[i].total_utility;
  e.log_normalizer = logsumexp(tilted);
  for (std::size_t i = 0; i < tilted.size(); ++i)
    e.histories[i].log_psi = tilted[i] - e.log_normalizer;
  return e;
}

double enumerate_risk_objective(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                ConstSpan params, double eta) {
  if (!(eta > 0.0)) throw ConfigError("risk objective needs eta > 0");
  return enumerate_trajectories(oracle, policy, params, eta).log_normalizer / eta;
}

Vector enumerate_fisher_expectation(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                    ConstSpan params, double eta) {
  const auto e = enumerate_trajectories(oracle, policy, params, eta);
  Vector g(policy.num_params(), 0.0), s(policy.num_params());
  for (const auto& h : e.histories) {
    std::fill(s.begin(), s.end(), 0.0);
    const auto inputs = history_inputs(h.trajectory, 1);
    policy.score(params, inputs, h.trajectory.actions, {}, s);
    const double p = std::exp(h.log_psi);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p * s[i];
  }
  return g;
}

Vector enumerate_risk_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                               ConstSpan params, double eta) {
  if (!(eta > 0.0)) throw ConfigError("risk gradient needs eta > 0");
  Vector g = enumerate_fisher_expectation(oracle, policy, params, eta);
  for (double& x : g) x /= eta;
  return g;
}

double enumerate_expected_return(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                 ConstSpan params) {
  const auto e = enumerate_trajectories(oracle, policy, params, 0.0);
  double r = 0.0;
  for (const auto& h : e.histories) r += std::exp(h.log_prior) * h.total_utility;
  return r;
}

Vector enumerate_risk_neutral_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params) {
  const auto e = enumerate_trajectories(oracle, policy, params, 0.0);
  Vector g(policy.num_params(), 0.0);
  for (const auto& h : e.histories) {
    const std::size_t T = h.trajectory.actions.size();
    // Reward-to-go: a_t is credited with ell_{t+1} .. ell_T.
    Vector to_go(T, 0.0);
    double acc = 0.0;
    for (std::size_t t = T; t-- > 0;) to_go[t] = (acc += h.utilities[t]);
    const double p = std::exp(h.log_prior);
    for (double& x : to_go) x *= p;
    const auto inputs = history_inputs(h.trajectory, 1);
    policy.score(params, inputs, h.trajectory.actions, to_go, g);
  }
  return g;
}

Vector finite_difference_risk_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params, double eta, double step) {
  Vector p(params.begin(), params.end()), g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    p[i] = x + step;
    const double up = enumerate_risk_objective(oracle, policy, p, eta);
    p[i] = x - step;
    const double down = enumerate_risk_objective(oracle, policy, p, eta);
    p[i] = x;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

RemarkCheck check_remark_decomposition(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params, double eta, double tolerance) {
  check_policy(oracle, policy);
  using Key = std::vector<std::size_t>;
  std::map<Key, double> V, Q;  // soft values keyed by (z0, a0, z1, ...)
  const int T = oracle.horizon();
  const auto A = oracle.num_actions(), Z = oracle.num_observations();

  // Backward recursion V(h_t) = log sum_a pi(a|h_t) exp(Q(h_t, a)),
  // Q(h_t, a) = log sum_z p(z|h_t, a) exp(eta ell_{t+1} + V(h_{t+1})).
  std::function<double(Key&, const Belief&, const PolicyState&)> value =
      [&](Key& key, const Belief& b, const PolicyState& ps) -> double {
    const int t = static_cast<int>(key.size() / 2);
    if (t == T) return V[key] = 0.0;
    Vector terms_a;
    for (std::size_t a = 0; a < A; ++a) {
      const Vector act{static_cast<double>(a)};
      const double la = policy.log_prob(params, ps, act);
      const Belief pred = predict(oracle, b, a);
      Vector terms_z;
      key.push_back(a);
      for (std::size_t z = 0; z < Z; ++z) {
        Belief post = pred;
        const double lz = condition_on(oracle, post, z);
        if (lz == kNegInf) continue;
        PolicyState next = ps;
        if (t + 1 < T) policy.observe(params, next, history_input(Vector{double(z)}, act, 1));
        key.push_back(z);
        const double v = value(key, post, next);
        key.pop_back();
        terms_z.push_back(lz + eta * expected_reward(oracle, post, a) + v);
      }
      const double q = logsumexp(terms_z);
      Q[key] = q;
      key.pop_back();
      terms_a.push_back(la + q);
    }
    return V[key] = logsumexp(terms_a);
  };

  Vector root_terms;  // log p(z0) + V(z0)
  std::map<std::size_t, double> log_pz0;
  for (std::size_t z = 0; z < Z; ++z) {
    Belief b = prior_belief(oracle);
    const double lz = condition_on(oracle, b, z);
    if (lz == kNegInf) continue;
    PolicyState ps = policy.initial_state();
    policy.observe(params, ps, history_input(Vector{double(z)}, {}, 1));
    Key key{z};
    root_terms.push_back(lz + value(key, b, ps));
    log_pz0[z] = lz;
  }
  const double log_evidence = logsumexp(root_terms);

  const auto e = enumerate_trajectories(oracle, policy, params, eta);
  RemarkCheck check;
  check.histories = e.histories.size();
  bool first = true;
  double c_lit = 0.0;
  for (const auto& h : e.histories) {
    const auto& tr = h.trajectory;
    Key key{discrete_index(tr.observations[0], Z)};
    // log p(z0 | O_{1:T})
    double with_pi = log_pz0.at(key[0]) + V.at(key) - log_evidence;
    double literal = with_pi;
    Belief b = enumerate_belief(oracle, Trajectory{{tr.observations[0]}, {}});
    PolicyState ps = policy.initial_state();
    policy.observe(params, ps, history_input(tr.observations[0], {}, 1));
    for (int t = 0; t < T; ++t) {
      const auto a = discrete_index(tr.actions[t], A);
      const auto z = discrete_index(tr.observations[t + 1], Z);
      const double v_t = V.at(key);
      Key key_a = key;
      key_a.push_back(a);
      const double q_t = Q.at(key_a);
      Belief post = predict(oracle, b, a);
      const double lz = condition_on(oracle, post, z);
      Key key_next = key_a;
      key_next.push_back(z);
      // log p(z_{t+1} | h_t, a_t, O_{t+1:T})
      const double cond_z = lz + eta * expected_reward(oracle, post, a) + V.at(key_next) - q_t;
      const double ratio = q_t - v_t;
      with_pi += cond_z + ratio + policy.log_prob(params, ps, tr.actions[t]);
      literal += cond_z + ratio;
      if (t + 1 < T) policy.observe(params, ps, history_input(tr.observations[t + 1], tr.actions[t], 1));
      b = std::move(post);
      key = std::move(key_next);
    }
    const double d = with_pi - h.log_psi, dl = literal - h.log_psi;
    if (first) {
      check.log_constant = d;
      c_lit = dl;
      first = false;
    }
    check.max_deviation = std::max(check.max_deviation, std::abs(d - check.log_constant));
    check.max_deviation_literal = std::max(check.max_deviation_literal, std::abs(dl - c_lit));
  }
  check.holds = check.max_deviation <= tolerance;
  return check;
}

bool verify_remark_decomposition(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                 ConstSpan params, double eta, double tolerance) {
  return check_remark_decomposition(oracle, policy, params, eta, tolerance).holds;
}

std::string trajectory_key(const Trajectory& traj) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t t = 0; t < traj.observations.size(); ++t) {
    if (t > 0) os << '|';
    os << 'z';
    for (double x : traj.observations[t]) os << ' ' << x;
    if (t < traj.actions.size()) {
      os << " a";
      for (double x : traj.actions[t]) os << ' ' << x;
    }
  }
  return os.str();
}

}  // namespace p3o
