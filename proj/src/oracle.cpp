#include "p3o/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

double PomdpModel::initial_logdensity(ConstSpan) const {
  throw ConfigError("model '" + name() + "' does not expose an initial density");
}

std::size_t discrete_index(ConstSpan v, std::size_t n) {
  if (v.size() != 1) throw std::invalid_argument("discrete value must be one-dimensional");
  const double x = v[0];
  if (!(x >= 0.0) || x != std::floor(x) || x >= static_cast<double>(n))
    throw std::invalid_argument("discrete value out of range");
  return static_cast<std::size_t>(x);
}

namespace {

void check_row(ConstSpan row, const std::string& what) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError(what + ": negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > DiscreteOraclePomdp::kRowSumTolerance) {
    std::ostringstream os;
    os << what << ": row sums to " << std::setprecision(17) << sum << ", expected 1";
    throw ConfigError(os.str());
  }
}

}  // namespace

DiscreteOraclePomdp::DiscreteOraclePomdp(OracleTables tables, std::string name)
    : tables_(std::move(tables)), name_(std::move(name)) {
  const auto S = tables_.num_states, A = tables_.num_actions, Z = tables_.num_observations;
  if (S == 0 || A == 0 || Z == 0) throw ConfigError("oracle: cardinalities must be positive");
  if (S > kMaxCardinality || A > kMaxCardinality || Z > kMaxCardinality)
    throw ConfigError("oracle: cardinalities above 4 are not enumerable");
  if (tables_.horizon < 1 || tables_.horizon > kMaxHorizon)
    throw ConfigError("oracle: horizon must be in [1, 3]");
  if (tables_.initial.size() != S || tables_.transition.size() != A * S * S ||
      tables_.observation.size() != S * Z || tables_.reward.size() != A * S)
    throw ConfigError("oracle: table sizes do not match cardinalities");

  check_row(tables_.initial, "oracle initial");
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t s = 0; s < S; ++s)
      check_row(ConstSpan(tables_.transition).subspan((a * S + s) * S, S),
                "oracle transition a=" + std::to_string(a) + " s=" + std::to_string(s));
  for (std::size_t s = 0; s < S; ++s)
    check_row(ConstSpan(tables_.observation).subspan(s * Z, Z),
              "oracle observation s=" + std::to_string(s));
  for (double r : tables_.reward) {
    if (!std::isfinite(r)) throw ConfigError("oracle: non-finite reward");
    reward_bound_ = std::max(reward_bound_, std::abs(r));
  }
}

DiscreteOraclePomdp DiscreteOraclePomdp::with_horizon(int horizon) const {
  OracleTables t = tables_;
  t.horizon = horizon;
  return DiscreteOraclePomdp(std::move(t), name_);
}

DiscreteOraclePomdp DiscreteOraclePomdp::parse(std::istream& in, std::string name) {
  OracleTables t;
  std::vector<std::string> lines;
  bool have_dims[4] = {false, false, false, false};
  std::string line;
  int lineno = 0;
  std::vector<std::pair<int, std::vector<std::string>>> rows;

  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string w; ls >> w;)
      if (w != ":") tok.push_back(w);
    if (tok.empty()) continue;
    rows.emplace_back(lineno, std::move(tok));
  }

  auto number = [](const std::string& s, int ln) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("oracle line " + std::to_string(ln) + ": expected a number, got '" + s + "'");
    }
  };
  auto count = [&](const std::string& s, int ln) {
    const double v = number(s, ln);
    if (v < 0 || v != std::floor(v))
      throw ConfigError("oracle line " + std::to_string(ln) + ": expected a non-negative integer");
    return static_cast<std::size_t>(v);
  };

  for (const auto& [ln, tok] : rows) {
    const std::string& key = tok[0];
    if (key == "states" || key == "actions" || key == "observations" || key == "horizon") {
      if (tok.size() != 2) throw ConfigError("oracle line " + std::to_string(ln) + ": expected one value");
      const std::size_t v = count(tok[1], ln);
      if (key == "states") t.num_states = v, have_dims[0] = true;
      if (key == "actions") t.num_actions = v, have_dims[1] = true;
      if (key == "observations") t.num_observations = v, have_dims[2] = true;
      if (key == "horizon") t.horizon = static_cast<int>(v), have_dims[3] = true;
    }
  }
  for (bool b : have_dims)
    if (!b) throw ConfigError("oracle: missing one of states/actions/observations/horizon");
  const auto S = t.num_states, A = t.num_actions, Z = t.num_observations;
  if (S == 0 || A == 0 || Z == 0 || S > kMaxCardinality || A > kMaxCardinality || Z > kMaxCardinality)
    throw ConfigError("oracle: cardinalities must be in [1, 4]");

  t.initial.assign(S, -1.0);
  t.transition.assign(A * S * S, -1.0);
  t.observation.assign(S * Z, -1.0);
  t.reward.assign(A * S, std::nan(""));
  std::vector<bool> seen_tr(A * S, false), seen_obs(S, false), seen_rw(A, false);
  bool seen_init = false;

  auto fill = [&](const std::vector<std::string>& tok, std::size_t first, std::size_t n, double* dst,
                  int ln) {
    if (tok.size() != first + n)
      throw ConfigError("oracle line " + std::to_string(ln) + ": expected " + std::to_string(n) +
                        " values");
    for (std::size_t i = 0; i < n; ++i) dst[i] = number(tok[first + i], ln);
  };

  for (const auto& [ln, tok] : rows) {
    const std::string& key = tok[0];
    if (key == "initial") {
      fill(tok, 1, S, t.initial.data(), ln);
      seen_init = true;
    } else if (key == "transition") {
      if (tok.size() < 3) throw ConfigError("oracle line " + std::to_string(ln) + ": transition <a> <s> ...");
      const auto a = count(tok[1], ln), s = count(tok[2], ln);
      if (a >= A || s >= S) throw ConfigError("oracle line " + std::to_string(ln) + ": index out of range");
      fill(tok, 3, S, &t.transition[(a * S + s) * S], ln);
      seen_tr[a * S + s] = true;
    } else if (key == "observation") {
      if (tok.size() < 2) throw ConfigError("oracle line " + std::to_string(ln) + ": observation <s> ...");
      const auto s = count(tok[1], ln);
      if (s >= S) throw ConfigError("oracle line " + std::to_string(ln) + ": index out of range");
      fill(tok, 2, Z, &t.observation[s * Z], ln);
      seen_obs[s] = true;
    } else if (key == "reward") {
      if (tok.size() < 2) throw ConfigError("oracle line " + std::to_string(ln) + ": reward <a> ...");
      const auto a = count(tok[1], ln);
      if (a >= A) throw ConfigError("oracle line " + std::to_string(ln) + ": index out of range");
      fill(tok, 2, S, &t.reward[a * S], ln);
      seen_rw[a] = true;
    } else if (key != "states" && key != "actions" && key != "observations" && key != "horizon") {
      throw ConfigError("oracle line " + std::to_string(ln) + ": unknown key '" + key + "'");
    }
  }
  if (!seen_init) throw ConfigError("oracle: missing initial row");
  for (bool b : seen_tr)
    if (!b) throw ConfigError("oracle: missing transition row");
  for (bool b : seen_obs)
    if (!b) throw ConfigError("oracle: missing observation row");
  for (bool b : seen_rw)
    if (!b) throw ConfigError("oracle: missing reward row");
  return DiscreteOraclePomdp(std::move(t), std::move(name));
}

DiscreteOraclePomdp DiscreteOraclePomdp::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open oracle file " + path.string());
  return parse(in, path.stem().string());
}

void DiscreteOraclePomdp::write(std::ostream& out) const {
  const auto S = num_states(), A = num_actions(), Z = num_observations();
  out << std::setprecision(17);
  out << "states " << S << "\nactions " << A << "\nobservations " << Z << "\nhorizon "
      << tables_.horizon << "\ninitial";
  for (double p : tables_.initial) out << ' ' << p;
  out << '\n';
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t s = 0; s < S; ++s) {
      out << "transition " << a << ' ' << s << " :";
      for (std::size_t n = 0; n < S; ++n) out << ' ' << f(n, s, a);
      out << '\n';
    }
  for (std::size_t s = 0; s < S; ++s) {
    out << "observation " << s << " :";
    for (std::size_t z = 0; z < Z; ++z) out << ' ' << g(z, s);
    out << '\n';
  }
  for (std::size_t a = 0; a < A; ++a) {
    out << "reward " << a << " :";
    for (std::size_t s = 0; s < S; ++s) out << ' ' << r(s, a);
    out << '\n';
  }
}

namespace {

std::size_t sample_row(RngStream& rng, const double* row, std::size_t n) {
  double cdf[DiscreteOraclePomdp::kMaxCardinality];
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) cdf[i] = (acc += row[i]);
  return inverse_cdf(ConstSpan(cdf, n), rng.uniform() * acc);
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace

void DiscreteOraclePomdp::sample_initial(RngStream& rng, MutSpan state) const {
  state[0] = static_cast<double>(sample_row(rng, tables_.initial.data(), num_states()));
}

void DiscreteOraclePomdp::transition_sample(ConstSpan state, ConstSpan action, RngStream& rng,
                                            MutSpan next) const {
  const auto s = discrete_index(state, num_states());
  const auto a = discrete_index(action, num_actions());
  next[0] = static_cast<double>(
      sample_row(rng, &tables_.transition[(a * num_states() + s) * num_states()], num_states()));
}

double DiscreteOraclePomdp::transition_logdensity(ConstSpan next, ConstSpan state,
                                                  ConstSpan action) const {
  return safe_log(f(discrete_index(next, num_states()), discrete_index(state, num_states()),
                    discrete_index(action, num_actions())));
}

void DiscreteOraclePomdp::observation_sample(ConstSpan state, RngStream& rng, MutSpan obs) const {
  const auto s = discrete_index(state, num_states());
  obs[0] = static_cast<double>(
      sample_row(rng, &tables_.observation[s * num_observations()], num_observations()));
}

double DiscreteOraclePomdp::observation_logdensity(ConstSpan obs, ConstSpan state) const {
  return safe_log(g(discrete_index(obs, num_observations()), discrete_index(state, num_states())));
}

double DiscreteOraclePomdp::reward(ConstSpan next_state, ConstSpan prev_action, int) const {
  return r(discrete_index(next_state, num_states()), discrete_index(prev_action, num_actions()));
}

std::optional<std::vector<Vector>> DiscreteOraclePomdp::finite_support() const {
  std::vector<Vector> support;
  for (std::size_t s = 0; s < num_states(); ++s) support.push_back({static_cast<double>(s)});
  return support;
}

double DiscreteOraclePomdp::initial_logdensity(ConstSpan state) const {
  return safe_log(p0(discrete_index(state, num_states())));
}

DiscreteOraclePomdp make_oracle_2x2x2(int horizon) {
  OracleTables t;
  t.num_states = 2;
  t.num_actions = 2;
  t.num_observations = 2;
  t.horizon = horizon;
  t.initial = {0.5, 0.5};
  // Action 0 mostly keeps the state, action 1 mostly flips it.
  t.transition = {0.9, 0.1, 0.1, 0.9,    // a = 0
                  0.2, 0.8, 0.8, 0.2};   // a = 1
  t.observation = {0.8, 0.2,             // s = 0
                   0.4, 0.6};            // s = 1
  // State 1 pays off; action 1 costs a little.
  t.reward = {-0.5, 1.0,                 // a = 0
              -0.7, 0.8};                // a = 1
  return DiscreteOraclePomdp(std::move(t), "oracle-2x2x2");
}

}  // namespace p3o
