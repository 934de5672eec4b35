#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace p3o {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Counter-based random stream.
///
/// A stream is fully determined by (seed, stream_id) and its position
/// `counter`. Workers never share a stream; each unit of parallel work derives
/// its own stream from a path of integers (purpose tag, step, particle index),
/// so results do not depend on how work is scheduled across threads.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  /// Stream whose id is a hash of `path`.
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // UniformRandomBitGenerator interface.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> block_{};
  int block_pos_ = 2;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Purpose tags for stream derivation. Values are part of the reproducibility
/// contract; do not renumber.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kOuterResample = 2,
  kParticleStep = 3,
  kBackward = 4,
  kEvaluation = 5,
  kParams = 6,
  kMinibatch = 7,
  kPrior = 8,
};

inline RngStream derive_stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
                               std::uint64_t b = 0) {
  return RngStream::derive(seed, {static_cast<std::uint64_t>(tag), a, b});
}

/// splitmix64 finalizer; used for seed and stream-id mixing.
std::uint64_t mix64(std::uint64_t x);

/// Index i with cdf[i-1] <= u < cdf[i]; strict inequality, fixed index order.
/// `cdf` is nondecreasing with cdf.back() the total mass.
std::size_t inverse_cdf(std::span<const double> cdf, double u);

}  // namespace p3o
