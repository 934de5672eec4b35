#include "p3o/parallel.hpp"

#include "p3o/errors.hpp"

namespace p3o {

const char* to_string(Execution e) { return e == Execution::kSerial ? "serial" : "parallel"; }

Execution parse_execution(const std::string& s) {
  if (s == "serial") return Execution::kSerial;
  if (s == "parallel") return Execution::kParallel;
  throw ConfigError("unknown execution mode '" + s + "' (serial, parallel)");
}

}  // namespace p3o
