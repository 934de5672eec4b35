#pragma once

#include <cstddef>
#include <exception>
#include <limits>
#include <string>

#include <omp.h>

namespace p3o {

/// kSerial is the reference path; kParallel runs the same per-index bodies
/// under OpenMP. Every body owns its RNG stream and writes only to its own
/// slot, so both give identical bits.
enum class Execution { kSerial, kParallel };

const char* to_string(Execution e);
Execution parse_execution(const std::string& s);

/// Calls body(i) for i in [0, n). If bodies throw, the exception from the
/// smallest index is rethrown after the loop, whatever the thread count.
template <class Body>
void for_each_index(std::size_t n, Execution exec, Body&& body) {
  if (exec == Execution::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr first;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(p3o_for_each_index)
      if (static_cast<std::size_t>(i) < first_index) {
        first_index = static_cast<std::size_t>(i);
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

/// Number of worker threads kParallel will use.
inline int worker_count() { return omp_get_max_threads(); }

}  // namespace p3o
