#pragma once

#include <cmath>
#include <vector>

#include "p3o/oracle.hpp"

namespace fixtures {

/// 2x2x2 tables with a custom observation matrix and rewards.
inline p3o::OracleTables tables_2x2x2(int horizon) {
  return p3o::make_oracle_2x2x2(horizon).tables();
}

inline p3o::DiscreteOraclePomdp with_observation(p3o::OracleTables t, std::vector<double> g) {
  t.observation = std::move(g);
  return p3o::DiscreteOraclePomdp(std::move(t));
}

inline p3o::DiscreteOraclePomdp with_reward(p3o::OracleTables t, std::vector<double> r) {
  t.reward = std::move(r);
  return p3o::DiscreteOraclePomdp(std::move(t));
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline double norm(const std::vector<double>& a) {
  double s = 0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace fixtures
