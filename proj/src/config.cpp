#include "p3o/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "p3o/errors.hpp"

namespace p3o {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "': '" + v + "' is not a number");
}

long to_long(const std::string& key, const std::string& v) {
  long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  return x;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long x = to_long(key, v);
  if (x < 0) throw ConfigError("key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': '" + v + "' is not an unsigned integer");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "-") return out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) {
    const std::size_t w = to_count(key, trim(tok));
    if (w == 0) throw ConfigError("key '" + key + "': layer widths must be positive");
    out.push_back(w);
  }
  return out;
}

std::string widths(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

std::string flag(bool b) { return b ? "true" : "false"; }

struct Key {
  const char* name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define P3O_KEY(NAME, GET, SET)                                                                    \
  Key {                                                                                            \
    NAME, [](const ExperimentConfig& c) -> std::string { return GET; },                           \
        [](ExperimentConfig& c, const std::string& v) { [[maybe_unused]] const std::string k = NAME; SET; } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      P3O_KEY("env", c.env, c.env = v),
      P3O_KEY("policy", c.policy, c.policy = v),
      P3O_KEY("policy.encoder", widths(c.encoder), c.encoder = to_widths(k, v)),
      P3O_KEY("policy.recurrent", widths(c.recurrent), c.recurrent = to_widths(k, v)),
      P3O_KEY("policy.post", std::to_string(c.post), c.post = to_count(k, v)),
      P3O_KEY("policy.decoder", widths(c.decoder), c.decoder = to_widths(k, v)),
      P3O_KEY("policy.init_log_std", c.init_log_std_set ? num(c.init_log_std) : "auto",
              if (v == "auto") c.init_log_std_set = false;
              else {
                c.init_log_std = to_double(k, v);
                c.init_log_std_set = true;
              }),
      P3O_KEY("smc.n_history", std::to_string(c.smc.n_history), c.smc.n_history = to_count(k, v)),
      P3O_KEY("smc.n_belief", std::to_string(c.smc.n_belief), c.smc.n_belief = to_count(k, v)),
      P3O_KEY("smc.eta", num(c.smc.eta), c.smc.eta = to_double(k, v)),
      P3O_KEY("smc.resample", to_string(c.smc.resample), c.smc.resample = parse_resample_scheme(v)),
      P3O_KEY("smc.outer", to_string(c.smc.outer), c.smc.outer = parse_outer_resampling(v)),
      P3O_KEY("smc.ess_threshold", num(c.smc.ess_threshold), c.smc.ess_threshold = to_double(k, v)),
      P3O_KEY("smc.inner", to_string(c.smc.inner), c.smc.inner = parse_inner_filter(v)),
      P3O_KEY("smc.potentials", flag(c.smc.use_potentials), c.smc.use_potentials = to_bool(k, v)),
      P3O_KEY("smc.slew", flag(c.smc.slew_in_utility), c.smc.slew_in_utility = to_bool(k, v)),
      P3O_KEY("smc.execution", to_string(c.smc.execution), c.smc.execution = parse_execution(v)),
      P3O_KEY("optim.kind", to_string(c.optimizer.kind), c.optimizer.kind = parse_optimizer_kind(v)),
      P3O_KEY("optim.lr", num(c.optimizer.learning_rate), c.optimizer.learning_rate = to_double(k, v)),
      P3O_KEY("optim.decay", num(c.optimizer.decay), c.optimizer.decay = to_double(k, v)),
      P3O_KEY("optim.beta1", num(c.optimizer.beta1), c.optimizer.beta1 = to_double(k, v)),
      P3O_KEY("optim.beta2", num(c.optimizer.beta2), c.optimizer.beta2 = to_double(k, v)),
      P3O_KEY("optim.epsilon", num(c.optimizer.epsilon), c.optimizer.epsilon = to_double(k, v)),
      P3O_KEY("optim.clip_norm", num(c.optimizer.clip_norm), c.optimizer.clip_norm = to_double(k, v)),
      P3O_KEY("train.iterations", std::to_string(c.iterations), c.iterations = static_cast<int>(to_long(k, v))),
      P3O_KEY("train.updates_per_run", std::to_string(c.updates_per_run),
              c.updates_per_run = static_cast<int>(to_long(k, v))),
      P3O_KEY("train.minibatch", std::to_string(c.minibatch), c.minibatch = static_cast<int>(to_long(k, v))),
      P3O_KEY("train.backward", c.backward, c.backward = v),
      P3O_KEY("train.reinforce_baseline", flag(c.reinforce_baseline), c.reinforce_baseline = to_bool(k, v)),
      P3O_KEY("train.save_tape", flag(c.save_tape), c.save_tape = to_bool(k, v)),
      P3O_KEY("eval.every", std::to_string(c.eval_every), c.eval_every = static_cast<int>(to_long(k, v))),
      P3O_KEY("eval.rollouts", std::to_string(c.eval_rollouts), c.eval_rollouts = static_cast<int>(to_long(k, v))),
      P3O_KEY("eval.n_belief", std::to_string(c.eval_belief), c.eval_belief = to_count(k, v)),
      P3O_KEY("eval.deterministic", flag(c.eval_deterministic), c.eval_deterministic = to_bool(k, v)),
      P3O_KEY("eval.store", std::to_string(c.eval_store), c.eval_store = static_cast<int>(to_long(k, v))),
      P3O_KEY("seed", std::to_string(c.seed), c.seed = to_u64(k, v)),
      P3O_KEY("output", c.output, c.output = v),
  };
  return k;
}

#undef P3O_KEY

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key.rfind("env.", 0) == 0 && key.size() > 4) {
    env_params[key.substr(4)] = to_double(key, v);
    return;
  }
  for (const auto& k : keys())
    if (key == k.name) {
      k.set(*this, v);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(*this));
  for (const auto& [name, value] : env_params) out.emplace_back("env." + name, num(value));
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
  return s;
}

void ExperimentConfig::validate() const {
  smc.validate();
  optimizer.validate();
  if (policy != "belief" && policy != "history" && policy != "tabular")
    throw ConfigError("policy must be belief, history or tabular, got '" + policy + "'");
  if (backward != "none") (void)parse_backward_mode(backward);
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (updates_per_run < 1 || minibatch < 1) throw ConfigError("train.updates_per_run and train.minibatch must be >= 1");
  if (eval_every < 1) throw ConfigError("eval.every must be >= 1");
  if (eval_rollouts < 1) throw ConfigError("eval.rollouts must be >= 1");
  if (eval_store < 0) throw ConfigError("eval.store must be >= 0");
  (void)make_model(env, env_params);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  int line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    config.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

}  // namespace p3o
