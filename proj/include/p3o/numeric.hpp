#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace p3o {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// log(sum(exp(x))) in a fixed left-to-right order. Returns -inf for an empty
/// span or when every entry is -inf.
inline double logsumexp(std::span<const double> x) {
  double mx = kNegInf;
  for (double v : x) mx = v > mx ? v : mx;
  if (mx == kNegInf) return kNegInf;
  if (mx == std::numeric_limits<double>::infinity()) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

/// Subtracts logsumexp so that exp(x) sums to one. Returns the subtracted value.
inline double normalize_log_weights(std::span<double> x) {
  const double lse = logsumexp(x);
  if (std::isfinite(lse))
    for (double& v : x) v -= lse;
  return lse;
}

/// Normal log-density. A zero standard deviation is treated as a point mass
/// with unit mass at the mean: log-density 0 on the mean, -inf elsewhere.
inline double normal_logpdf(double x, double mean, double stddev) {
  if (stddev == 0.0) return x == mean ? 0.0 : kNegInf;
  const double d = (x - mean) / stddev;
  return -0.5 * (d * d + kLogTwoPi) - std::log(stddev);
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r <= 0.0) r += two_pi;
  return r - std::numbers::pi;
}

/// Wrapped-normal log-density on (-pi, pi], truncated to |k| <= wraps.
inline double wrapped_normal_logpdf(double x, double mean, double stddev, int wraps = 3) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double d0 = wrap_angle(x - mean);
  double terms[16];
  int count = 0;
  for (int k = -wraps; k <= wraps && count < 16; ++k)
    terms[count++] = normal_logpdf(d0 + two_pi * k, 0.0, stddev);
  return logsumexp(std::span<const double>(terms, static_cast<std::size_t>(count)));
}

/// Effective sample size 1 / sum w^2 of normalized weights.
inline double effective_sample_size(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return s > 0.0 ? 1.0 / s : 0.0;
}

/// ESS from normalized log-weights.
inline double effective_sample_size_log(std::span<const double> log_weights) {
  double s = 0.0;
  for (double lw : log_weights) s += std::exp(2.0 * lw);
  return s > 0.0 ? 1.0 / s : 0.0;
}

}  // namespace p3o
