#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "p3o/backward_sampler.hpp"
#include "p3o/belief_filter.hpp"
#include "p3o/environments.hpp"
#include "p3o/nested_smc.hpp"
#include "p3o/optimizer.hpp"
#include "p3o/parallel.hpp"

namespace p3o {

/// Everything a training or evaluation run needs.
///
/// Text form is flat `key = value` lines with dotted namespaces; `#` starts a
/// comment. Environment constants live under `env.<name>`; every other key is
/// listed by config_keys().
struct ExperimentConfig {
  std::string env = "lightdark";
  EnvParams env_params;

  // "belief", "history" or "tabular"; neural widths apply to the first two.
  std::string policy = "belief";
  std::vector<std::size_t> encoder{256, 256, 128};
  std::vector<std::size_t> recurrent{128, 128};
  std::size_t post = 128;
  std::vector<std::size_t> decoder{256, 256};
  double init_log_std = 0.0;  // used when init_log_std_set
  bool init_log_std_set = false;

  NestedSmcConfig smc;
  OptimizerConfig optimizer;

  int iterations = 100;      // filter runs
  int updates_per_run = 8;   // mini-batches per run
  int minibatch = 16;
  std::string backward = "none";  // "none", "full" or "two-ancestor"
  bool reinforce_baseline = false;
  bool save_tape = false;

  int eval_every = 10;
  int eval_rollouts = 1024;
  std::size_t eval_belief = 0;  // 0: same as smc.n_belief
  bool eval_deterministic = false;
  int eval_store = 1024;  // rollouts whose full trajectories are kept

  std::uint64_t seed = 0;
  std::string output = "runs/default";

  /// Sets one key from its text value. Throws ConfigError on an unknown key or
  /// a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in a stable order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  /// Also builds the model so environment keys are checked.
  void validate() const;

  bool uses_backward() const { return backward != "none"; }
  BackwardMode backward_mode() const { return parse_backward_mode(backward); }
};

/// Non-environment keys accepted by ExperimentConfig::set.
std::vector<std::string> config_keys();

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Applies `key=value` overrides in order.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides);

}  // namespace p3o
