#include "p3o/tape_io.hpp"

#include <cmath>
#include <fstream>

#include "p3o/binary_io.hpp"

namespace p3o {

namespace {

constexpr char kMagic[9] = "P3OTAPE1";

void put_all(std::ostream& out, const Vector& v) {
  for (double d : v) binary::put_f64(out, d);
}

void put_all(std::ostream& out, const std::vector<std::uint32_t>& v) {
  for (auto i : v) binary::put_f64(out, static_cast<double>(i));
}

void get_all(std::istream& in, Vector& v, std::size_t n) {
  v.resize(n);
  for (auto& d : v) d = binary::get_f64(in);
}

void get_all(std::istream& in, std::vector<std::uint32_t>& v, std::size_t n, std::size_t bound) {
  v.resize(n);
  for (auto& i : v) {
    const double d = binary::get_f64(in);
    if (!(d >= 0.0 && d < static_cast<double>(bound)) || d != std::floor(d))
      throw ConfigError("tape index out of range");
    i = static_cast<std::uint32_t>(d);
  }
}

}  // namespace

void write_tape(std::ostream& out, const FilterTape& tape) {
  binary::put_magic(out, kMagic);
  for (std::size_t v : {tape.n_history, tape.n_belief, static_cast<std::size_t>(tape.horizon()), tape.state_dim,
                        tape.obs_dim, tape.action_dim, tape.input_dim})
    binary::put_u64(out, v);
  binary::put_f64(out, tape.eta);
  binary::put_f64(out, tape.exact_inner ? 1.0 : 0.0);
  for (const auto& st : tape.steps) {
    put_all(out, st.observations);
    put_all(out, st.actions);
    put_all(out, st.log_weights);
    put_all(out, st.ancestors);
    put_all(out, st.belief_ancestors);
    put_all(out, st.belief_states);
    put_all(out, st.belief_log_weights);
    put_all(out, st.utilities);
    put_all(out, st.policy_inputs);
    binary::put_f64(out, st.resampled ? 1.0 : 0.0);
  }
}

FilterTape read_tape(std::istream& in) {
  binary::expect_magic(in, kMagic);
  FilterTape tape;
  tape.n_history = binary::get_u64(in);
  tape.n_belief = binary::get_u64(in);
  const auto T = binary::get_u64(in);
  tape.state_dim = binary::get_u64(in);
  tape.obs_dim = binary::get_u64(in);
  tape.action_dim = binary::get_u64(in);
  tape.input_dim = binary::get_u64(in);
  tape.eta = binary::get_f64(in);
  tape.exact_inner = binary::get_f64(in) != 0.0;
  const std::size_t N = tape.n_history, M = tape.n_belief;
  if (N == 0 || M == 0 || T > 100000 || N > (1u << 24) || M > (1u << 24) || tape.state_dim == 0)
    throw ConfigError("implausible tape dimensions");
  tape.steps.resize(T + 1);
  for (auto& st : tape.steps) {
    get_all(in, st.observations, N * tape.obs_dim);
    get_all(in, st.actions, N * tape.action_dim);
    get_all(in, st.log_weights, N);
    get_all(in, st.ancestors, N, N);
    get_all(in, st.belief_ancestors, N * M, M);
    get_all(in, st.belief_states, N * M * tape.state_dim);
    get_all(in, st.belief_log_weights, N * M);
    get_all(in, st.utilities, N);
    get_all(in, st.policy_inputs, N * tape.input_dim);
    st.resampled = binary::get_f64(in) != 0.0;
  }
  return tape;
}

void save_tape(const std::string& path, const FilterTape& tape) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_tape(out, tape);
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

FilterTape load_tape(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_tape(in);
}

}  // namespace p3o
