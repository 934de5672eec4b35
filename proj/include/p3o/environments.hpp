#pragma once

#include <array>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "p3o/pomdp.hpp"

namespace p3o {

/// Key/value overrides for an environment's constants. Keys a model does not
/// know are rejected with ConfigError.
using EnvParams = std::map<std::string, double>;

/// Reads keys from EnvParams with defaults and remembers which were used.
class ParamReader {
 public:
  ParamReader(const EnvParams& params, std::string model) : params_(params), model_(std::move(model)) {}
  double get(const std::string& key, double fallback);
  double positive(const std::string& key, double fallback);
  double non_negative(const std::string& key, double fallback);
  int integer(const std::string& key, int fallback, int min_value = 1);
  /// Throws ConfigError naming any key that was never read.
  void finish() const;

 private:
  const EnvParams& params_;
  std::string model_;
  std::set<std::string> used_;
};

/// Torque-limited pendulum swing-up. State (theta, omega) with theta = 0
/// upright; the angle is kept unwrapped. Observation (cos theta, sin theta)
/// plus Gaussian noise, velocity hidden.
class PendulumModel final : public PomdpModel {
 public:
  struct Params {
    double dt = 0.05, gravity = 10.0, mass = 1.0, length = 1.0;
    double max_torque = 2.0, max_speed = 8.0;
    double angle_noise = 0.01, velocity_noise = 0.05, obs_noise = 0.1;
    double init_angle = 3.141592653589793, init_angle_std = 0.1, init_velocity_std = 0.1;
    double slew = 0.05, reward_bound = 20.0;
    int horizon = 100;
  };
  explicit PendulumModel(Params p) : p_(p) {}
  static Params read(const EnvParams& params);
  const Params& params() const { return p_; }

  /// Noiseless semi-implicit Euler step.
  std::array<double, 2> mean_step(double theta, double omega, double torque) const;

  std::string name() const override { return "pendulum"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 2; }
  int horizon() const override { return p_.horizon; }
  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const override;
  void observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const override;
  double observation_logdensity(ConstSpan z, ConstSpan s) const override;
  double reward(ConstSpan next, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return p_.reward_bound; }
  Vector action_bound() const override { return {p_.max_torque}; }
  double slew_penalty() const override { return p_.slew; }

 private:
  Params p_;
};

/// Cart-pole swing-up (Barto et al. equations). State (x, x_dot, theta,
/// theta_dot), theta = 0 upright. Observation (x, cos theta, sin theta) plus
/// noise. Once |x| passes the track limit the mean dynamics freeze in place
/// (velocities zeroed) and every step pays `boundary_penalty`.
class CartpoleModel final : public PomdpModel {
 public:
  struct Params {
    double dt = 0.02, gravity = 9.8, cart_mass = 1.0, pole_mass = 0.1, half_length = 0.5;
    double max_force = 10.0, track_limit = 2.4, boundary_penalty = 10.0;
    double position_noise = 0.002, velocity_noise = 0.02, angle_noise = 0.002,
           angular_velocity_noise = 0.02, obs_noise = 0.05;
    double init_angle = 3.141592653589793, init_std = 0.05;
    double slew = 0.05, reward_bound = 20.0;
    int horizon = 100;
  };
  explicit CartpoleModel(Params p) : p_(p) {}
  static Params read(const EnvParams& params);
  const Params& params() const { return p_; }

  /// Time derivative of the state under horizontal force `force`.
  std::array<double, 4> derivative(const std::array<double, 4>& s, double force) const;
  /// Noiseless semi-implicit Euler step including the boundary rule.
  std::array<double, 4> mean_step(const std::array<double, 4>& s, double action) const;

  std::string name() const override { return "cartpole"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 3; }
  int horizon() const override { return p_.horizon; }
  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const override;
  void observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const override;
  double observation_logdensity(ConstSpan z, ConstSpan s) const override;
  double reward(ConstSpan next, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return p_.reward_bound; }
  Vector action_bound() const override { return {1.0}; }
  double slew_penalty() const override { return p_.slew; }

 private:
  std::array<double, 4> noise_std() const;
  Params p_;
};

/// 2-D single integrator whose position observations are sharp only near a
/// vertical light line: sigma(s) = sigma_min + c (x - x_light)^2.
class LightDarkModel final : public PomdpModel {
 public:
  struct Params {
    double light_x = 5.0, goal_x = 0.0, goal_y = 0.0, start_x = 2.0, start_y = 2.0;
    // Per-axis start deviations; the key start_std sets both.
    double start_std_x = 1.0, start_std_y = 1.0;
    double process_noise = 0.1, sigma_min = 0.1, noise_slope = 0.1;
    double action_weight = 0.01, max_step = 1.0;
    double slew = 0.05, reward_bound = 100.0;
    int horizon = 30;
  };
  explicit LightDarkModel(Params p) : p_(p) {}
  static Params read(const EnvParams& params);
  const Params& params() const { return p_; }

  double obs_std(double x) const { return p_.sigma_min + p_.noise_slope * (x - p_.light_x) * (x - p_.light_x); }

  std::string name() const override { return "lightdark"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 2; }
  std::size_t obs_dim() const override { return 2; }
  int horizon() const override { return p_.horizon; }
  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const override;
  void observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const override;
  double observation_logdensity(ConstSpan z, ConstSpan s) const override;
  double reward(ConstSpan next, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return p_.reward_bound; }
  Vector action_bound() const override { return {p_.max_step, p_.max_step}; }
  double slew_penalty() const override { return p_.slew; }

 private:
  Params p_;
};

/// 2-D single integrator observed only through the bearing from the agent to
/// the origin, atan2(-y, -x), with wrapped-normal noise. Within `origin_radius`
/// of the origin the bearing is replaced by a uniform angle.
class TriangulationModel final : public PomdpModel {
 public:
  struct Params {
    double start_x = 2.0, start_y = -2.0, start_std = 1.0, process_noise = 0.1;
    double bearing_noise = 0.05, origin_radius = 1e-6;
    double action_weight = 0.01, max_step = 0.5;
    double slew = 0.05, reward_bound = 100.0;
    int horizon = 40;
  };
  explicit TriangulationModel(Params p) : p_(p) {}
  static Params read(const EnvParams& params);
  const Params& params() const { return p_; }

  /// Noiseless bearing; NaN inside the origin radius.
  double mean_bearing(double x, double y) const;

  std::string name() const override { return "triangulation"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 2; }
  std::size_t obs_dim() const override { return 1; }
  int horizon() const override { return p_.horizon; }
  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const override;
  void observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const override;
  double observation_logdensity(ConstSpan z, ConstSpan s) const override;
  double reward(ConstSpan next, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return p_.reward_bound; }
  Vector action_bound() const override { return {p_.max_step, p_.max_step}; }
  double slew_penalty() const override { return p_.slew; }

 private:
  Params p_;
};

/// Linear-Gaussian model in one or two dimensions with diagonal matrices:
/// s' = a s + b u + N(0, q^2), z = c s + N(0, r^2), reward -|s|^2 - lambda |u|^2.
class LinearGaussianModel final : public PomdpModel {
 public:
  struct Params {
    int dim = 1;
    double a = 0.9, b = 1.0, c = 1.0, q = 1.0, r = 1.0;
    double init_mean = 0.0, init_std = 1.0;
    double action_weight = 0.01, max_action = 1.0;
    double slew = 0.0, reward_bound = 100.0;
    int horizon = 50;
  };
  explicit LinearGaussianModel(Params p);
  static Params read(const EnvParams& params);
  const Params& params() const { return p_; }

  std::string name() const override { return "linear-gaussian"; }
  std::size_t state_dim() const override { return static_cast<std::size_t>(p_.dim); }
  std::size_t action_dim() const override { return static_cast<std::size_t>(p_.dim); }
  std::size_t obs_dim() const override { return static_cast<std::size_t>(p_.dim); }
  int horizon() const override { return p_.horizon; }
  void sample_initial(RngStream& rng, MutSpan state) const override;
  void transition_sample(ConstSpan s, ConstSpan a, RngStream& rng, MutSpan next) const override;
  double transition_logdensity(ConstSpan next, ConstSpan s, ConstSpan a) const override;
  void observation_sample(ConstSpan s, RngStream& rng, MutSpan z) const override;
  double observation_logdensity(ConstSpan z, ConstSpan s) const override;
  double reward(ConstSpan next, ConstSpan prev_action, int t) const override;
  double reward_bound() const override { return p_.reward_bound; }
  Vector action_bound() const override { return Vector(state_dim(), p_.max_action); }
  double slew_penalty() const override { return p_.slew; }

 private:
  Params p_;
};

/// Exact Kalman filter for LinearGaussianModel.
class KalmanFilter {
 public:
  explicit KalmanFilter(const LinearGaussianModel::Params& p);
  void predict(ConstSpan action);
  /// Returns log p(z | past).
  double update(ConstSpan observation);
  const Vector& mean() const { return mean_; }
  /// Covariance, dim x dim row-major.
  const Vector& covariance() const { return cov_; }

 private:
  LinearGaussianModel::Params p_;
  Vector mean_, cov_;
};

/// Clips a reward to [-bound, bound].
double clip_reward(double r, double bound);

/// Registered names: pendulum, cartpole, lightdark, triangulation,
/// linear-gaussian, oracle-2x2x2, and oracle:<path> for a table file.
std::unique_ptr<PomdpModel> make_model(const std::string& name, const EnvParams& params = {});
std::vector<std::string> registered_models();

}  // namespace p3o
