#pragma once

#include <iosfwd>
#include <string>

#include "p3o/nested_smc.hpp"

namespace p3o {

/// Binary tape layout: the 8-byte magic "P3OTAPE1"; unsigned 64-bit
/// N, M, T, state_dim, obs_dim, action_dim, input_dim; float64 eta and an
/// exact-inner flag; then
/// for each step t = 0..T, in this order and all as little-endian float64:
/// observations, actions, log_weights, ancestors, belief_ancestors,
/// belief_states, belief_log_weights, utilities, policy_inputs, and a
/// resampled flag. Indices are stored as exact float64 integers.
void write_tape(std::ostream& out, const FilterTape& tape);
FilterTape read_tape(std::istream& in);

/// File wrappers; throw IoError on failure and ConfigError on a bad header.
void save_tape(const std::string& path, const FilterTape& tape);
FilterTape load_tape(const std::string& path);

}  // namespace p3o
