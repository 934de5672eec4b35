#include <sstream>

#include "p3o/errors.hpp"
#include "p3o/neural_policy.hpp"
#include "p3o/policy.hpp"
#include "p3o/tabular_policy.hpp"

namespace p3o {

std::unique_ptr<Policy> make_policy(const std::string& descriptor) {
  std::istringstream is(descriptor);
  std::string kind;
  is >> kind;
  if (kind == "neural") return std::make_unique<NeuralPolicy>(NeuralArchitecture::parse(descriptor));
  if (kind == "tabular") {
    long z = -1, a = -1, t = -1;
    for (std::string tok; is >> tok;) {
      const auto eq = tok.find('=');
      const std::string key = tok.substr(0, eq);
      const long v = eq == std::string::npos ? -1 : std::atol(tok.c_str() + eq + 1);
      if (key == "observations") z = v;
      else if (key == "actions") a = v;
      else if (key == "horizon") t = v;
      else throw ConfigError("unknown tabular policy key '" + key + "'");
    }
    if (z <= 0 || a <= 0 || t <= 0) throw ConfigError("tabular policy descriptor is incomplete");
    return std::make_unique<TabularSoftmaxPolicy>(static_cast<std::size_t>(z),
                                                  static_cast<std::size_t>(a), static_cast<int>(t));
  }
  throw ConfigError("unknown policy kind '" + kind + "'");
}

}  // namespace p3o
