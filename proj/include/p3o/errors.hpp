#pragma once

#include <stdexcept>
#include <string>

namespace p3o {

/// Invalid configuration, registry name, or input file. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure inside a filter, policy, or optimizer. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  enum class Kind {
    kModelDivergence,
    kBeliefCollapse,
    kAllParticlesCollapsed,
    kOverflow,
    kInvalidModel,
    kImpossibleHistory,
    kNoSamples,
  };

  NumericError(Kind kind, const std::string& what, long index = -1)
      : std::runtime_error(what), kind_(kind), index_(index) {}

  Kind kind() const { return kind_; }
  /// Particle index or time step the failure refers to; -1 when not applicable.
  long index() const { return index_; }

 private:
  Kind kind_;
  long index_;
};

/// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace p3o
