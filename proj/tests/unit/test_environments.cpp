#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "p3o/belief_filter.hpp"
#include "p3o/environments.hpp"
#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

using namespace p3o;

namespace {

constexpr double kPi = std::numbers::pi;

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
double ks_pvalue(Vector a, Vector b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

// Independent draws from exp(observation_logdensity(., s)) by rejection from
// a Gaussian envelope (or uniform on (-pi, pi] for angles) fitted to a pilot
// sample from observation_sample.
std::vector<Vector> rejection_draws(const PomdpModel& model, ConstSpan s, std::size_t n, RngStream& rng,
                                    bool angular) {
  const std::size_t d = model.obs_dim();
  Vector mu(d, 0.0), sd(d, 0.0);
  const std::size_t pilot = 2000;
  std::vector<Vector> ps(pilot, Vector(d));
  for (auto& z : ps) model.observation_sample(s, rng, z);
  for (const auto& z : ps)
    for (std::size_t i = 0; i < d; ++i) mu[i] += z[i] / pilot;
  for (const auto& z : ps)
    for (std::size_t i = 0; i < d; ++i) sd[i] += (z[i] - mu[i]) * (z[i] - mu[i]) / pilot;
  for (auto& x : sd) x = 2.0 * std::sqrt(x) + 1e-9;
  auto log_q = [&](ConstSpan z) {
    if (angular) return -std::log(2.0 * kPi);
    double lq = 0.0;
    for (std::size_t i = 0; i < d; ++i) lq += normal_logpdf(z[i], mu[i], sd[i]);
    return lq;
  };
  auto draw_q = [&](Vector& z) {
    for (std::size_t i = 0; i < d; ++i) z[i] = angular ? rng.uniform(-kPi, kPi) : rng.normal(mu[i], sd[i]);
  };
  // Envelope constant from the pilot points and extra proposal draws.
  double log_k = kNegInf;
  Vector z(d);
  for (const auto& p : ps) log_k = std::max(log_k, model.observation_logdensity(p, s) - log_q(p));
  for (int k = 0; k < 20000; ++k) {
    draw_q(z);
    log_k = std::max(log_k, model.observation_logdensity(z, s) - log_q(z));
  }
  log_k += std::log(1.5);
  std::vector<Vector> out;
  while (out.size() < n) {
    draw_q(z);
    const double lr = model.observation_logdensity(z, s) - log_q(z) - log_k;
    REQUIRE(lr <= 0.0);
    if (std::log(rng.uniform()) < lr) out.push_back(z);
  }
  return out;
}

void check_observation_ks(const PomdpModel& model, std::uint64_t seed, bool angular = false) {
  RngStream rng(seed, 0);
  const std::size_t n = 10000;
  // 20 states per model: Bonferroni over the per-model family keeps the
  // family-wise false-alarm rate at 1%.
  const double alpha = 0.01 / (20.0 * model.obs_dim());
  int failures = 0;
  for (int k = 0; k < 20; ++k) {
    Vector s(model.state_dim());
    model.sample_initial(rng, s);
    for (auto& x : s) x += rng.normal(0.0, 1.0);
    const auto ref = rejection_draws(model, s, n, rng, angular);
    for (std::size_t i = 0; i < model.obs_dim(); ++i) {
      Vector a(n), b(n);
      Vector z(model.obs_dim());
      for (std::size_t j = 0; j < n; ++j) {
        model.observation_sample(s, rng, z);
        a[j] = z[i];
        b[j] = ref[j][i];
      }
      const double p = ks_pvalue(a, b);
      if (p <= alpha) ++failures;
      CHECK_MESSAGE(p > alpha, model.name(), " state ", k, " dim ", i, " p=", p);
    }
  }
  CHECK(failures == 0);
}

}  // namespace

TEST_CASE("registry") {
  for (const char* name : {"pendulum", "cartpole", "lightdark", "triangulation", "linear-gaussian", "oracle-2x2x2"}) {
    const auto m = make_model(name);
    CHECK(m->horizon() >= 1);
    CHECK(m->reward_bound() > 0.0);
  }
  CHECK_THROWS_AS(make_model("nope"), ConfigError);
  CHECK_THROWS_AS(make_model("pendulum", {{"not_a_key", 1.0}}), ConfigError);
  CHECK_THROWS_AS(make_model("lightdark", {{"process_noise", -1.0}}), ConfigError);
  CHECK(make_model("lightdark", {{"horizon", 7.0}})->horizon() == 7);
  CHECK(make_model("oracle-2x2x2", {{"horizon", 3.0}})->horizon() == 3);
}

TEST_CASE("observation densities match samplers (KS)") {
  check_observation_ks(PendulumModel({}), 1);
  check_observation_ks(CartpoleModel({}), 2);
  check_observation_ks(LightDarkModel({}), 3);
  check_observation_ks(TriangulationModel({}), 4, true);
  LinearGaussianModel::Params lp;
  lp.dim = 2;
  check_observation_ks(LinearGaussianModel(lp), 5);
}

TEST_CASE("observation densities integrate to one on a grid") {
  RngStream rng(7, 7);
  auto integrate_2d = [](const PomdpModel& m, ConstSpan s, double half, int n) {
    const double h = 2.0 * half / n;
    double acc = 0.0;
    Vector z(2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        z[0] = -half + (i + 0.5) * h;
        z[1] = -half + (j + 0.5) * h;
        acc += std::exp(m.observation_logdensity(z, s)) * h * h;
      }
    return acc;
  };
  // Pendulum: observation centred at (cos, sin); grid covers +-1 + 8 sigma.
  const PendulumModel pend({});
  for (int k = 0; k < 5; ++k) {
    const Vector s{rng.uniform(-kPi, kPi), rng.normal()};
    CHECK(integrate_2d(pend, s, 2.0, 800) == doctest::Approx(1.0).epsilon(1e-3));
  }
  // Light-dark: near and away from the light line.
  const LightDarkModel ld({});
  for (double x : {5.0, 4.0, 2.0}) {
    const Vector s{x, 0.5};
    const double sd = ld.obs_std(x);
    const double half = std::max(std::abs(x), 0.5) + 8.0 * sd;
    CHECK(integrate_2d(ld, s, half, 1200) == doctest::Approx(1.0).epsilon(1e-3));
  }
  // Linear-gaussian 1-D and 2-D.
  const LinearGaussianModel lg1({});
  double acc = 0.0;
  for (int i = 0; i < 4000; ++i) {
    const double z = -10.0 + (i + 0.5) * 20.0 / 4000;
    acc += std::exp(lg1.observation_logdensity(Vector{z}, Vector{0.3})) * 20.0 / 4000;
  }
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-3));
  LinearGaussianModel::Params p2;
  p2.dim = 2;
  const LinearGaussianModel lg2(p2);
  CHECK(integrate_2d(lg2, Vector{0.2, -0.4}, 8.0, 800) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("rewards respect R_max on a dense grid") {
  const std::vector<std::unique_ptr<PomdpModel>> models = [] {
    std::vector<std::unique_ptr<PomdpModel>> v;
    for (const char* n : {"pendulum", "cartpole", "lightdark", "triangulation", "linear-gaussian"})
      v.push_back(make_model(n));
    return v;
  }();
  for (const auto& m : models) {
    const double bound = m->reward_bound();
    const std::size_t S = m->state_dim(), A = m->action_dim();
    const int steps = S > 2 ? 7 : 41;
    Vector s(S), a(A);
    const std::size_t total = static_cast<std::size_t>(std::pow(steps, S));
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t r = idx;
      for (std::size_t i = 0; i < S; ++i) {
        s[i] = -20.0 + 40.0 * double(r % steps) / (steps - 1);
        r /= steps;
      }
      for (double av : {-5.0, 0.0, 0.7, 5.0}) {
        std::fill(a.begin(), a.end(), av);
        CHECK(std::abs(m->reward(s, a, 1)) <= bound);
      }
    }
  }
}

TEST_CASE("pendulum") {
  PendulumModel::Params p;
  p.angle_noise = p.velocity_noise = 0.0;
  const PendulumModel pend(p);
  RngStream rng(1, 1);
  // Downward rest with zero torque stays put.
  Vector s{kPi, 0.0}, n(2);
  for (int k = 0; k < 100; ++k) {
    pend.transition_sample(s, Vector{0.0}, rng, n);
    s = n;
  }
  CHECK(std::abs(s[0] - kPi) < 1e-9);
  CHECK(std::abs(s[1]) < 1e-9);
  // Upright at rest with zero action is the reward apex.
  const double apex = pend.reward(Vector{0.0, 0.0}, Vector{0.0}, 1);
  CHECK(apex == 0.0);
  for (double th = -kPi; th <= kPi; th += 0.1)
    for (double w = -8.0; w <= 8.0; w += 0.5) CHECK(pend.reward(Vector{th, w}, Vector{0.0}, 1) <= apex);
  // Observation never carries the velocity.
  CHECK(pend.obs_dim() == 2);
  // Energy E = w^2/2 - (3g/2l) cos(theta): the one-step energy error of a
  // zero-torque step against a fine integration shrinks like dt^2.
  const double k = 3.0 * p.gravity / (2.0 * p.length);
  auto energy = [&](double th, double w) { return 0.5 * w * w + k * std::cos(th); };
  auto worst_error = [&](double dt) {
    auto q = p;
    q.dt = dt;
    const PendulumModel m(q);
    RngStream r(9, 9);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const double th = r.uniform(-kPi, kPi), w = r.uniform(-3.0, 3.0);
      const auto coarse = m.mean_step(th, w, 0.0);
      double ft = th, fw = w;
      const int sub = 1000;
      for (int j = 0; j < sub; ++j) {
        fw += k * std::sin(ft) * dt / sub;
        ft += fw * dt / sub;
      }
      worst = std::max(worst, std::abs(energy(coarse[0], coarse[1]) - energy(ft, fw)));
    }
    return worst;
  };
  const double e1 = worst_error(p.dt), e2 = worst_error(p.dt / 2), e4 = worst_error(p.dt / 4);
  CHECK(e1 / e2 > 3.0);
  CHECK(e2 / e4 > 3.0);
}

TEST_CASE("cart-pole") {
  CartpoleModel::Params p;
  p.position_noise = p.velocity_noise = p.angle_noise = p.angular_velocity_noise = 0.0;
  const CartpoleModel cp(p);
  RngStream rng(2, 2);
  // Zero force, pole down: stationary.
  Vector s{0.0, 0.0, kPi, 0.0}, n(4);
  for (int k = 0; k < 100; ++k) {
    cp.transition_sample(s, Vector{0.0}, rng, n);
    s = n;
  }
  for (int i = 0; i < 4; ++i) CHECK(std::abs(s[i] - (i == 2 ? kPi : 0.0)) < 1e-9);
  // Observation is (x, cos, sin): no velocities.
  CHECK(cp.obs_dim() == 3);
  Vector z(3);
  cp.observation_sample(Vector{0.3, 9.0, 0.0, -9.0}, rng, z);
  CHECK(std::abs(z[0] - 0.3) < 0.5);

  // Fine-dt semi-implicit rollout vs. RK4 on the same vector field over 2 s,
  // constant force small enough that the cart stays on the track.
  auto fine = p;
  fine.dt = 1e-4;
  const CartpoleModel cf(fine);
  const double h = 1e-3, act = 0.05, f = act * p.max_force;
  std::array<double, 4> a{0.0, 0.0, kPi - 0.3, 0.0}, r = a;
  for (int k = 0; k < 20000; ++k) a = cf.mean_step(a, act);
  for (int k = 0; k < 2000; ++k) {
    auto add = [](std::array<double, 4> x, const std::array<double, 4>& d, double c) {
      for (int i = 0; i < 4; ++i) x[i] += c * d[i];
      return x;
    };
    const auto k1 = cf.derivative(r, f);
    const auto k2 = cf.derivative(add(r, k1, h / 2), f);
    const auto k3 = cf.derivative(add(r, k2, h / 2), f);
    const auto k4 = cf.derivative(add(r, k3, h), f);
    for (int i = 0; i < 4; ++i) r[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  CHECK(std::abs(a[0]) < p.track_limit);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(a[i] - r[i]) < 1e-3);

  // Leaving the track freezes the mean dynamics and pays the penalty.
  const auto frozen = cp.mean_step({2.5, 1.0, 0.2, 0.3}, 1.0);
  CHECK(frozen[0] == 2.5);
  CHECK(frozen[1] == 0.0);
  CHECK(cp.reward(Vector{2.5, 0.0, 0.0, 0.0}, Vector{0.0}, 1) <= -p.boundary_penalty);
}

TEST_CASE("light-dark") {
  const LightDarkModel ld({});
  const auto& p = ld.params();
  CHECK(ld.obs_std(p.light_x) == p.sigma_min);
  CHECK(ld.reward(Vector{p.goal_x, p.goal_y}, Vector{0.0, 0.0}, 1) == 0.0);
  // Goal and light lie in different directions from the start.
  const double gx = p.goal_x - p.start_x, gy = p.goal_y - p.start_y;
  const double lx = p.light_x - p.start_x;
  CHECK(gx * lx < 0.0);
  (void)gy;

  // Belief covariance after 5 steps in the light is smaller than in the dark.
  int wins = 0;
  for (int seed = 0; seed < 100; ++seed) {
    double trace[2];
    for (int side = 0; side < 2; ++side) {
      LightDarkModel::Params q = p;
      q.start_x = side == 0 ? p.light_x : p.goal_x;
      q.start_y = 0.0;
      const LightDarkModel m(q);
      RngStream rng(seed, 10), sim(seed, 11);
      auto b = init_belief(m, 500, rng);
      Vector s(2), z(2), n(2);
      m.sample_initial(sim, s);
      const Vector a{0.0, 0.0};
      for (int t = 0; t < 5; ++t) {
        m.transition_sample(s, a, sim, n);
        s = n;
        resample_belief(b, rng);
        propagate(b, a, m, rng);
        m.observation_sample(s, sim, z);
        reweight(b, z, m);
      }
      const auto mom = belief_moments(b);
      trace[side] = mom.covariance[0] + mom.covariance[3];
    }
    wins += trace[0] < trace[1];
  }
  CHECK(wins == 100);
}

TEST_CASE("triangulation") {
  const TriangulationModel tri({});
  CHECK(tri.mean_bearing(1.0, 0.0) == doctest::Approx(kPi));
  CHECK(tri.mean_bearing(0.0, 1.0) == doctest::Approx(-kPi / 2));
  CHECK(std::isnan(tri.mean_bearing(0.0, 0.0)));
  CHECK(tri.reward(Vector{0.0, 0.0}, Vector{0.0, 0.0}, 1) == 0.0);
  // Inside the origin radius the density is the uniform fallback.
  CHECK(tri.observation_logdensity(Vector{0.3}, Vector{0.0, 0.0}) == doctest::Approx(-std::log(2 * kPi)));

  // Wrapped density integrates to one over (-pi, pi].
  for (const Vector s : {Vector{1.0, 0.0}, Vector{-2.0, 0.1}, Vector{0.3, -0.7}}) {
    const int n = 200000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = -kPi + (i + 0.5) * 2 * kPi / n;
      acc += std::exp(tri.observation_logdensity(Vector{z}, s)) * 2 * kPi / n;
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }
  // Periodicity: density(theta) == density(theta + 2 pi). The shifted input
  // is itself rounded, so equality is checked to a few ulps.
  RngStream rng(3, 3);
  for (int k = 0; k < 1000; ++k) {
    const Vector s{rng.normal(), rng.normal()};
    const double th = rng.uniform(-kPi, kPi);
    const double a = tri.observation_logdensity(Vector{th}, s);
    const double b = tri.observation_logdensity(Vector{th + 2 * kPi}, s);
    CHECK(std::abs(a - b) <= 1e-9 * (1.0 + std::abs(a)));
  }
}

TEST_CASE("linear-gaussian") {
  // Zero noise: the Kalman variance contracts to zero.
  LinearGaussianModel::Params p;
  p.q = 0.0;
  p.r = 1e-6;
  KalmanFilter kf(p);
  kf.update(Vector{0.5});
  kf.predict(Vector{0.0});
  kf.update(Vector{0.45});
  CHECK(kf.covariance()[0] < 1e-10);

  // Identity dynamics with no control: the state mean is stationary.
  LinearGaussianModel::Params id;
  id.a = 1.0;
  id.init_mean = 0.7;
  const LinearGaussianModel m(id);
  RngStream rng(4, 4);
  double mean = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    Vector s(1), nx(1);
    m.sample_initial(rng, s);
    for (int t = 0; t < 10; ++t) {
      m.transition_sample(s, Vector{0.0}, rng, nx);
      s = nx;
    }
    mean += s[0] / n;
  }
  CHECK(std::abs(mean - 0.7) <= 4.0 * std::sqrt(1.0 + 10.0) / std::sqrt(double(n)));

  // Kalman log-likelihood matches the predictive density.
  KalmanFilter k2(LinearGaussianModel::Params{});
  const double ll = k2.update(Vector{0.4});
  CHECK(ll == doctest::Approx(normal_logpdf(0.4, 0.0, std::sqrt(2.0))));
}
