#include "p3o/environments.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"
#include "p3o/oracle.hpp"

namespace p3o {

double ParamReader::get(const std::string& key, double fallback) {
  used_.insert(key);
  const auto it = params_.find(key);
  return it == params_.end() ? fallback : it->second;
}

double ParamReader::positive(const std::string& key, double fallback) {
  const double v = get(key, fallback);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(model_ + "." + key + " must be positive");
  return v;
}

double ParamReader::non_negative(const std::string& key, double fallback) {
  const double v = get(key, fallback);
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(model_ + "." + key + " must be non-negative");
  return v;
}

int ParamReader::integer(const std::string& key, int fallback, int min_value) {
  const double v = get(key, fallback);
  if (v != std::floor(v) || v < min_value || v > 1e6)
    throw ConfigError(model_ + "." + key + " must be an integer >= " + std::to_string(min_value));
  return static_cast<int>(v);
}

void ParamReader::finish() const {
  for (const auto& [k, v] : params_)
    if (!used_.count(k)) throw ConfigError("unknown parameter '" + k + "' for model " + model_);
}

double clip_reward(double r, double bound) {
  if (std::isnan(r)) return -bound;
  return std::clamp(r, -bound, bound);
}

namespace {

double clamp_abs(double x, double bound) { return std::clamp(x, -bound, bound); }

}  // namespace

// ---------------------------------------------------------------- pendulum

PendulumModel::Params PendulumModel::read(const EnvParams& params) {
  ParamReader r(params, "pendulum");
  Params p;
  p.dt = r.positive("dt", p.dt);
  p.gravity = r.non_negative("gravity", p.gravity);
  p.mass = r.positive("mass", p.mass);
  p.length = r.positive("length", p.length);
  p.max_torque = r.positive("max_torque", p.max_torque);
  p.max_speed = r.positive("max_speed", p.max_speed);
  p.angle_noise = r.non_negative("angle_noise", p.angle_noise);
  p.velocity_noise = r.non_negative("velocity_noise", p.velocity_noise);
  p.obs_noise = r.positive("obs_noise", p.obs_noise);
  p.init_angle = r.get("init_angle", p.init_angle);
  p.init_angle_std = r.non_negative("init_angle_std", p.init_angle_std);
  p.init_velocity_std = r.non_negative("init_velocity_std", p.init_velocity_std);
  p.slew = r.non_negative("slew", p.slew);
  p.reward_bound = r.positive("reward_bound", p.reward_bound);
  p.horizon = r.integer("horizon", p.horizon);
  r.finish();
  return p;
}

std::array<double, 2> PendulumModel::mean_step(double theta, double omega, double torque) const {
  const double u = clamp_abs(torque, p_.max_torque);
  const double accel = 3.0 * p_.gravity / (2.0 * p_.length) * std::sin(theta) +
                       3.0 / (p_.mass * p_.length * p_.length) * u;
  const double w = clamp_abs(omega + accel * p_.dt, p_.max_speed);
  return {theta + w * p_.dt, w};
}

void PendulumModel::sample_initial(RngStream& rng, MutSpan s) const {
  s[0] = rng.normal(p_.init_angle, p_.init_angle_std);
  s[1] = rng.normal(0.0, p_.init_velocity_std);
}

void PendulumModel::transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const {
  const auto m = mean_step(s[0], s[1], a[0]);
  next[0] = rng.normal(m[0], p_.angle_noise);
  next[1] = rng.normal(m[1], p_.velocity_noise);
}

double PendulumModel::transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const {
  const auto m = mean_step(s[0], s[1], a[0]);
  return normal_logpdf(next[0], m[0], p_.angle_noise) + normal_logpdf(next[1], m[1], p_.velocity_noise);
}

void PendulumModel::observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const {
  z[0] = rng.normal(std::cos(s[0]), p_.obs_noise);
  z[1] = rng.normal(std::sin(s[0]), p_.obs_noise);
}

double PendulumModel::observation_logdensity(ConstSpan z, ConstSpan s) const {
  return normal_logpdf(z[0], std::cos(s[0]), p_.obs_noise) +
         normal_logpdf(z[1], std::sin(s[0]), p_.obs_noise);
}

double PendulumModel::reward(ConstSpan next, ConstSpan prev_action, int) const {
  const double th = wrap_angle(next[0]);
  const double u = clamp_abs(prev_action[0], p_.max_torque);
  return clip_reward(-(th * th + 0.1 * next[1] * next[1] + 0.001 * u * u), p_.reward_bound);
}

// ---------------------------------------------------------------- cart-pole

CartpoleModel::Params CartpoleModel::read(const EnvParams& params) {
  ParamReader r(params, "cartpole");
  Params p;
  p.dt = r.positive("dt", p.dt);
  p.gravity = r.non_negative("gravity", p.gravity);
  p.cart_mass = r.positive("cart_mass", p.cart_mass);
  p.pole_mass = r.positive("pole_mass", p.pole_mass);
  p.half_length = r.positive("half_length", p.half_length);
  p.max_force = r.positive("max_force", p.max_force);
  p.track_limit = r.positive("track_limit", p.track_limit);
  p.boundary_penalty = r.non_negative("boundary_penalty", p.boundary_penalty);
  p.position_noise = r.non_negative("position_noise", p.position_noise);
  p.velocity_noise = r.non_negative("velocity_noise", p.velocity_noise);
  p.angle_noise = r.non_negative("angle_noise", p.angle_noise);
  p.angular_velocity_noise = r.non_negative("angular_velocity_noise", p.angular_velocity_noise);
  p.obs_noise = r.positive("obs_noise", p.obs_noise);
  p.init_angle = r.get("init_angle", p.init_angle);
  p.init_std = r.non_negative("init_std", p.init_std);
  p.slew = r.non_negative("slew", p.slew);
  p.reward_bound = r.positive("reward_bound", p.reward_bound);
  p.horizon = r.integer("horizon", p.horizon);
  r.finish();
  return p;
}

std::array<double, 4> CartpoleModel::derivative(const std::array<double, 4>& s, double force) const {
  const double total = p_.cart_mass + p_.pole_mass;
  const double pml = p_.pole_mass * p_.half_length;
  const double sin_t = std::sin(s[2]), cos_t = std::cos(s[2]);
  const double temp = (force + pml * s[3] * s[3] * sin_t) / total;
  const double theta_acc = (p_.gravity * sin_t - cos_t * temp) /
                           (p_.half_length * (4.0 / 3.0 - p_.pole_mass * cos_t * cos_t / total));
  const double x_acc = temp - pml * theta_acc * cos_t / total;
  return {s[1], x_acc, s[3], theta_acc};
}

std::array<double, 4> CartpoleModel::mean_step(const std::array<double, 4>& s, double action) const {
  if (std::abs(s[0]) >= p_.track_limit) return {s[0], 0.0, s[2], 0.0};
  const double force = p_.max_force * clamp_abs(action, 1.0);
  const auto d = derivative(s, force);
  std::array<double, 4> n;
  n[1] = s[1] + p_.dt * d[1];
  n[0] = s[0] + p_.dt * n[1];
  n[3] = s[3] + p_.dt * d[3];
  n[2] = s[2] + p_.dt * n[3];
  return n;
}

std::array<double, 4> CartpoleModel::noise_std() const {
  return {p_.position_noise, p_.velocity_noise, p_.angle_noise, p_.angular_velocity_noise};
}

void CartpoleModel::sample_initial(RngStream& rng, MutSpan s) const {
  s[0] = rng.normal(0.0, p_.init_std);
  s[1] = rng.normal(0.0, p_.init_std);
  s[2] = rng.normal(p_.init_angle, p_.init_std);
  s[3] = rng.normal(0.0, p_.init_std);
}

void CartpoleModel::transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const {
  const auto m = mean_step({s[0], s[1], s[2], s[3]}, a[0]);
  const auto sd = noise_std();
  for (int i = 0; i < 4; ++i) next[i] = rng.normal(m[i], sd[i]);
}

double CartpoleModel::transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const {
  const auto m = mean_step({s[0], s[1], s[2], s[3]}, a[0]);
  const auto sd = noise_std();
  double lp = 0.0;
  for (int i = 0; i < 4; ++i) lp += normal_logpdf(next[i], m[i], sd[i]);
  return lp;
}

void CartpoleModel::observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const {
  z[0] = rng.normal(s[0], p_.obs_noise);
  z[1] = rng.normal(std::cos(s[2]), p_.obs_noise);
  z[2] = rng.normal(std::sin(s[2]), p_.obs_noise);
}

double CartpoleModel::observation_logdensity(ConstSpan z, ConstSpan s) const {
  return normal_logpdf(z[0], s[0], p_.obs_noise) + normal_logpdf(z[1], std::cos(s[2]), p_.obs_noise) +
         normal_logpdf(z[2], std::sin(s[2]), p_.obs_noise);
}

double CartpoleModel::reward(ConstSpan next, ConstSpan prev_action, int) const {
  const double th = wrap_angle(next[2]);
  const double u = clamp_abs(prev_action[0], 1.0);
  double r = -(th * th + 0.1 * next[0] * next[0] + 0.01 * next[1] * next[1] +
               0.01 * next[3] * next[3] + 0.01 * u * u);
  if (std::abs(next[0]) >= p_.track_limit) r -= p_.boundary_penalty;
  return clip_reward(r, p_.reward_bound);
}

// ---------------------------------------------------------------- light-dark

LightDarkModel::Params LightDarkModel::read(const EnvParams& params) {
  ParamReader r(params, "lightdark");
  Params p;
  p.light_x = r.get("light_x", p.light_x);
  p.goal_x = r.get("goal_x", p.goal_x);
  p.goal_y = r.get("goal_y", p.goal_y);
  p.start_x = r.get("start_x", p.start_x);
  p.start_y = r.get("start_y", p.start_y);
  const double start_std = r.non_negative("start_std", p.start_std_x);
  p.start_std_x = r.non_negative("start_std_x", start_std);
  p.start_std_y = r.non_negative("start_std_y", start_std);
  p.process_noise = r.non_negative("process_noise", p.process_noise);
  p.sigma_min = r.positive("sigma_min", p.sigma_min);
  p.noise_slope = r.non_negative("noise_slope", p.noise_slope);
  p.action_weight = r.non_negative("action_weight", p.action_weight);
  p.max_step = r.positive("max_step", p.max_step);
  p.slew = r.non_negative("slew", p.slew);
  p.reward_bound = r.positive("reward_bound", p.reward_bound);
  p.horizon = r.integer("horizon", p.horizon);
  r.finish();
  return p;
}

void LightDarkModel::sample_initial(RngStream& rng, MutSpan s) const {
  s[0] = rng.normal(p_.start_x, p_.start_std_x);
  s[1] = rng.normal(p_.start_y, p_.start_std_y);
}

void LightDarkModel::transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const {
  for (int i = 0; i < 2; ++i) next[i] = rng.normal(s[i] + clamp_abs(a[i], p_.max_step), p_.process_noise);
}

double LightDarkModel::transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const {
  double lp = 0.0;
  for (int i = 0; i < 2; ++i)
    lp += normal_logpdf(next[i], s[i] + clamp_abs(a[i], p_.max_step), p_.process_noise);
  return lp;
}

void LightDarkModel::observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const {
  const double sd = obs_std(s[0]);
  for (int i = 0; i < 2; ++i) z[i] = rng.normal(s[i], sd);
}

double LightDarkModel::observation_logdensity(ConstSpan z, ConstSpan s) const {
  const double sd = obs_std(s[0]);
  return normal_logpdf(z[0], s[0], sd) + normal_logpdf(z[1], s[1], sd);
}

double LightDarkModel::reward(ConstSpan next, ConstSpan prev_action, int) const {
  const double dx = next[0] - p_.goal_x, dy = next[1] - p_.goal_y;
  const double ax = clamp_abs(prev_action[0], p_.max_step), ay = clamp_abs(prev_action[1], p_.max_step);
  return clip_reward(-(dx * dx + dy * dy) - p_.action_weight * (ax * ax + ay * ay), p_.reward_bound);
}

// ---------------------------------------------------------------- triangulation

TriangulationModel::Params TriangulationModel::read(const EnvParams& params) {
  ParamReader r(params, "triangulation");
  Params p;
  p.start_x = r.get("start_x", p.start_x);
  p.start_y = r.get("start_y", p.start_y);
  p.start_std = r.non_negative("start_std", p.start_std);
  p.process_noise = r.non_negative("process_noise", p.process_noise);
  p.bearing_noise = r.positive("bearing_noise", p.bearing_noise);
  p.origin_radius = r.positive("origin_radius", p.origin_radius);
  p.action_weight = r.non_negative("action_weight", p.action_weight);
  p.max_step = r.positive("max_step", p.max_step);
  p.slew = r.non_negative("slew", p.slew);
  p.reward_bound = r.positive("reward_bound", p.reward_bound);
  p.horizon = r.integer("horizon", p.horizon);
  r.finish();
  return p;
}

double TriangulationModel::mean_bearing(double x, double y) const {
  if (x * x + y * y < p_.origin_radius * p_.origin_radius) return std::nan("");
  // atan2 gives -pi for a signed-zero y; bearings live in (-pi, pi].
  const double b = std::atan2(-y, -x);
  return b <= -std::numbers::pi ? std::numbers::pi : b;
}

void TriangulationModel::sample_initial(RngStream& rng, MutSpan s) const {
  s[0] = rng.normal(p_.start_x, p_.start_std);
  s[1] = rng.normal(p_.start_y, p_.start_std);
}

void TriangulationModel::transition_sample(ConstSpan s, ConstSpan a, RngStream& rng,
                                           MutSpan next) const {
  for (int i = 0; i < 2; ++i) next[i] = rng.normal(s[i] + clamp_abs(a[i], p_.max_step), p_.process_noise);
}

double TriangulationModel::transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const {
  double lp = 0.0;
  for (int i = 0; i < 2; ++i)
    lp += normal_logpdf(next[i], s[i] + clamp_abs(a[i], p_.max_step), p_.process_noise);
  return lp;
}

void TriangulationModel::observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const {
  const double m = mean_bearing(s[0], s[1]);
  if (std::isnan(m))
    z[0] = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
  else
    z[0] = wrap_angle(rng.normal(m, p_.bearing_noise));
}

double TriangulationModel::observation_logdensity(ConstSpan z, ConstSpan s) const {
  const double m = mean_bearing(s[0], s[1]);
  if (std::isnan(m)) return -std::log(2.0 * std::numbers::pi);
  return wrapped_normal_logpdf(z[0], m, p_.bearing_noise);
}

double TriangulationModel::reward(ConstSpan next, ConstSpan prev_action, int) const {
  const double ax = clamp_abs(prev_action[0], p_.max_step), ay = clamp_abs(prev_action[1], p_.max_step);
  return clip_reward(-(next[0] * next[0] + next[1] * next[1]) - p_.action_weight * (ax * ax + ay * ay),
                     p_.reward_bound);
}

// ---------------------------------------------------------------- linear-Gaussian

LinearGaussianModel::LinearGaussianModel(Params p) : p_(p) {
  if (p_.dim != 1 && p_.dim != 2) throw ConfigError("linear-gaussian dim must be 1 or 2");
}

LinearGaussianModel::Params LinearGaussianModel::read(const EnvParams& params) {
  ParamReader r(params, "linear-gaussian");
  Params p;
  p.dim = r.integer("dim", p.dim);
  p.a = r.get("a", p.a);
  p.b = r.get("b", p.b);
  p.c = r.get("c", p.c);
  p.q = r.non_negative("q", p.q);
  p.r = r.non_negative("r", p.r);
  p.init_mean = r.get("init_mean", p.init_mean);
  p.init_std = r.non_negative("init_std", p.init_std);
  p.action_weight = r.non_negative("action_weight", p.action_weight);
  p.max_action = r.positive("max_action", p.max_action);
  p.slew = r.non_negative("slew", p.slew);
  p.reward_bound = r.positive("reward_bound", p.reward_bound);
  p.horizon = r.integer("horizon", p.horizon);
  r.finish();
  return p;
}

void LinearGaussianModel::sample_initial(RngStream& rng, MutSpan s) const {
  for (int i = 0; i < p_.dim; ++i) s[i] = rng.normal(p_.init_mean, p_.init_std);
}

void LinearGaussianModel::transition_sample(ConstSpan s, ConstSpan a, RngStream& rng,
                                            MutSpan next) const {
  for (int i = 0; i < p_.dim; ++i)
    next[i] = rng.normal(p_.a * s[i] + p_.b * clamp_abs(a[i], p_.max_action), p_.q);
}

double LinearGaussianModel::transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const {
  double lp = 0.0;
  for (int i = 0; i < p_.dim; ++i)
    lp += normal_logpdf(next[i], p_.a * s[i] + p_.b * clamp_abs(a[i], p_.max_action), p_.q);
  return lp;
}

void LinearGaussianModel::observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const {
  for (int i = 0; i < p_.dim; ++i) z[i] = rng.normal(p_.c * s[i], p_.r);
}

double LinearGaussianModel::observation_logdensity(ConstSpan z, ConstSpan s) const {
  double lp = 0.0;
  for (int i = 0; i < p_.dim; ++i) lp += normal_logpdf(z[i], p_.c * s[i], p_.r);
  return lp;
}

double LinearGaussianModel::reward(ConstSpan next, ConstSpan prev_action, int) const {
  double r = 0.0;
  for (int i = 0; i < p_.dim; ++i) {
    const double u = clamp_abs(prev_action[i], p_.max_action);
    r -= next[i] * next[i] + p_.action_weight * u * u;
  }
  return clip_reward(r, p_.reward_bound);
}

KalmanFilter::KalmanFilter(const LinearGaussianModel::Params& p) : p_(p) {
  const auto d = static_cast<std::size_t>(p.dim);
  mean_.assign(d, p.init_mean);
  cov_.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) cov_[i * d + i] = p.init_std * p.init_std;
}

void KalmanFilter::predict(ConstSpan action) {
  const Eigen::Index d = p_.dim;
  Eigen::Map<Eigen::VectorXd> m(mean_.data(), d);
  Eigen::Map<Eigen::MatrixXd> P(cov_.data(), d, d);
  const Eigen::MatrixXd A = p_.a * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd u(d);
  for (Eigen::Index i = 0; i < d; ++i) u[i] = std::clamp(action[i], -p_.max_action, p_.max_action);
  m = A * m + p_.b * u;
  P = A * P * A.transpose() + p_.q * p_.q * Eigen::MatrixXd::Identity(d, d);
}

double KalmanFilter::update(ConstSpan observation) {
  const Eigen::Index d = p_.dim;
  Eigen::Map<Eigen::VectorXd> m(mean_.data(), d);
  Eigen::Map<Eigen::MatrixXd> P(cov_.data(), d, d);
  const Eigen::MatrixXd C = p_.c * Eigen::MatrixXd::Identity(d, d);
  const Eigen::Map<const Eigen::VectorXd> z(observation.data(), d);
  const Eigen::VectorXd innov = z - C * m;
  const Eigen::MatrixXd S = C * P * C.transpose() + p_.r * p_.r * Eigen::MatrixXd::Identity(d, d);
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  const Eigen::MatrixXd K = P * C.transpose() * llt.solve(Eigen::MatrixXd::Identity(d, d));
  m += K * innov;
  P = (Eigen::MatrixXd::Identity(d, d) - K * C) * P;
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (innov.dot(llt.solve(innov)) + logdet + static_cast<double>(d) * kLogTwoPi);
}

// ---------------------------------------------------------------- registry

std::vector<std::string> registered_models() {
  return {"pendulum", "cartpole", "lightdark", "triangulation", "linear-gaussian", "oracle-2x2x2",
          "oracle:<path>"};
}

std::unique_ptr<PomdpModel> make_model(const std::string& name, const EnvParams& params) {
  if (name == "pendulum") return std::make_unique<PendulumModel>(PendulumModel::read(params));
  if (name == "cartpole") return std::make_unique<CartpoleModel>(CartpoleModel::read(params));
  if (name == "lightdark") return std::make_unique<LightDarkModel>(LightDarkModel::read(params));
  if (name == "triangulation")
    return std::make_unique<TriangulationModel>(TriangulationModel::read(params));
  if (name == "linear-gaussian")
    return std::make_unique<LinearGaussianModel>(LinearGaussianModel::read(params));
  if (name == "oracle-2x2x2" || name.rfind("oracle:", 0) == 0) {
    ParamReader r(params, name);
    const auto base = name == "oracle-2x2x2" ? make_oracle_2x2x2()
                                             : DiscreteOraclePomdp::load(name.substr(7));
    const int horizon = r.integer("horizon", base.horizon());
    r.finish();
    return std::make_unique<DiscreteOraclePomdp>(base.with_horizon(horizon));
  }
  std::string known;
  for (const auto& n : registered_models()) known += " " + n;
  throw ConfigError("unknown model '" + name + "'; registered:" + known);
}

}  // namespace p3o
