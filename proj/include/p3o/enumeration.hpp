#pragma once

#include <string>
#include <vector>

#include "p3o/oracle.hpp"
#include "p3o/policy.hpp"

namespace p3o {

/// Exact posterior over the oracle's states given z_{0:t}, a_{0:t-1}.
/// Throws NumericError(kImpossibleHistory) when the prefix has zero likelihood.
Vector enumerate_belief(const DiscreteOraclePomdp& oracle, const Trajectory& prefix);

/// One complete history of positive prior probability.
struct EnumeratedHistory {
  Trajectory trajectory;
  double log_prior = 0.0;      // log p_phi(z_{0:T}, a_{0:T-1})
  Vector utilities;            // ell_1 .. ell_T from exact beliefs
  double total_utility = 0.0;  // sum of utilities
  double log_psi = 0.0;        // log of the normalized tilted distribution
};

struct Enumeration {
  std::vector<EnumeratedHistory> histories;
  /// log E_p[exp(eta * sum ell)], i.e. log p_phi(O_{1:T}); 0 when eta = 0.
  double log_normalizer = 0.0;
  double eta = 0.0;
};

/// Every history in a fixed depth-first order (z before a at each level,
/// indices ascending). `policy` must accept one-dimensional action indices.
/// eta = 0 gives log_psi equal to the prior.
Enumeration enumerate_trajectories(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                   ConstSpan params, double eta);

/// B_eta = (1/eta) log E_p[exp(eta * sum ell)], computed in the log domain.
double enumerate_risk_objective(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                ConstSpan params, double eta);

/// E_Psi[sum_t grad log pi(a_t | h_t)], the expectation sampled by the
/// particle estimator.
Vector enumerate_fisher_expectation(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                    ConstSpan params, double eta);

/// grad B_eta = (1/eta) * enumerate_fisher_expectation(...).
Vector enumerate_risk_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                               ConstSpan params, double eta);

/// Risk-neutral objective E_p[sum ell] and its reward-to-go score gradient.
double enumerate_expected_return(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                 ConstSpan params);
Vector enumerate_risk_neutral_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params);

/// Central finite differences of enumerate_risk_objective.
Vector finite_difference_risk_gradient(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params, double eta, double step = 1e-5);

/// Outcome of checking the soft-value decomposition of the tilted target.
///
/// The factorization p(z_0|O) prod_t p(z_{t+1}|h_t,a_t,O) pi(a_t|h_t)
/// exp(Q_t - V_t) is evaluated term by term from soft values
/// V_t = log p(O_{t+1:T}|h_t) and Q_t = log p(O_{t+1:T}|h_t,a_t) and compared
/// with the directly enumerated log Psi_T. The variant without the pi(a_t|h_t)
/// factor is also reported; it only matches when the policy is uniform.
struct RemarkCheck {
  double max_deviation = 0.0;          // with the prior-policy factor
  double max_deviation_literal = 0.0;  // without it
  double log_constant = 0.0;           // shared log proportionality constant
  std::size_t histories = 0;
  bool holds = false;                  // max_deviation <= tolerance
};

RemarkCheck check_remark_decomposition(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                       ConstSpan params, double eta, double tolerance = 1e-10);

/// Pointwise proportionality of the decomposition to Psi_T within `tolerance`.
bool verify_remark_decomposition(const DiscreteOraclePomdp& oracle, const Policy& policy,
                                 ConstSpan params, double eta, double tolerance = 1e-10);

/// Exact text key of a trajectory, usable for frequency tables.
std::string trajectory_key(const Trajectory& traj);

}  // namespace p3o
