#include "cso/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cso/error.hpp"

namespace cso {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  fail(ErrorCode::config, "config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::string unquote(const std::string& value) {
  if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
    return value.substr(1, value.size() - 2);
  return value;
}

long long to_integer(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::logic_error&) {
    bad_value(key, value, "an integer");
  }
  if (used != value.size()) bad_value(key, value, "an integer");
  return v;
}

int to_int(const std::string& key, const std::string& value) {
  const auto v = to_integer(key, value);
  if (v < INT32_MIN || v > INT32_MAX) bad_value(key, value, "a 32-bit integer");
  return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &used);
  } catch (const std::logic_error&) {
    bad_value(key, value, "a nonnegative integer");
  }
  if (used != value.size()) bad_value(key, value, "a nonnegative integer");
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::logic_error&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "a finite number");
  return v;
}

std::vector<std::uint64_t> to_u64_list(const std::string& key, const std::string& value) {
  std::string body = value;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') bad_value(key, value, "a list like [1, 2, 3]");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::uint64_t> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_u64(key, item));
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

std::vector<std::pair<std::string, Setter>> build_setters() {
  std::vector<std::pair<std::string, Setter>> s;
  auto integer = [&](const char* key, auto member) {
    s.emplace_back(key, [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_int(k, v); });
  };
  auto real = [&](const char* key, auto member) {
    s.emplace_back(key, [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); });
  };
  auto u64 = [&](const char* key, auto member) {
    s.emplace_back(key, [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_u64(k, v); });
  };

  integer("world.tools", [](RunConfig& c) -> int& { return c.world.tools; });
  integer("world.arguments", [](RunConfig& c) -> int& { return c.world.arguments; });
  integer("world.answers", [](RunConfig& c) -> int& { return c.world.answers; });
  integer("world.recipe_length_l1", [](RunConfig& c) -> int& { return c.world.recipe_lengths[0]; });
  integer("world.recipe_length_l2", [](RunConfig& c) -> int& { return c.world.recipe_lengths[1]; });
  integer("world.recipe_length_l3", [](RunConfig& c) -> int& { return c.world.recipe_lengths[2]; });
  real("world.distractor_density", [](RunConfig& c) -> double& { return c.world.distractor_density; });
  integer("world.horizon_slack", [](RunConfig& c) -> int& { return c.world.horizon_slack; });

  integer("tasks.count", [](RunConfig& c) -> int& { return c.task_count; });
  integer("tasks.eval_count", [](RunConfig& c) -> int& { return c.eval_task_count; });
  real("tasks.mix_l1", [](RunConfig& c) -> double& { return c.mix.l1; });
  real("tasks.mix_l2", [](RunConfig& c) -> double& { return c.mix.l2; });
  real("tasks.mix_l3", [](RunConfig& c) -> double& { return c.mix.l3; });
  u64("tasks.seed", [](RunConfig& c) -> std::uint64_t& { return c.task_seed; });
  u64("tasks.eval_seed", [](RunConfig& c) -> std::uint64_t& { return c.eval_task_seed; });

  integer("policy.feature_dim", [](RunConfig& c) -> int& { return c.features.dimension; });
  integer("policy.history_window", [](RunConfig& c) -> int& { return c.features.history_window; });
  real("policy.expert_epsilon", [](RunConfig& c) -> double& { return c.expert_epsilon; });
  integer("policy.demo_trials", [](RunConfig& c) -> int& { return c.demo_trials; });
  real("policy.sft_step_size", [](RunConfig& c) -> double& { return c.sft.step_size; });
  integer("policy.sft_epochs", [](RunConfig& c) -> int& { return c.sft.epochs; });

  s.emplace_back("prm.mode", [](RunConfig& c, const std::string& k, const std::string& v) {
    if (v == "rubric") c.prm.mode = PrmConfig::Mode::rubric;
    else if (v == "remote") c.prm.mode = PrmConfig::Mode::remote;
    else bad_value(k, v, "rubric or remote");
  });
  real("prm.eta", [](RunConfig& c) -> double& { return c.prm.rubric.noise_eta; });
  s.emplace_back("prm.noise", [](RunConfig& c, const std::string& k, const std::string& v) {
    if (v == "uniform") c.prm.rubric.noise = NoiseModel::uniform;
    else if (v == "gaussian") c.prm.rubric.noise = NoiseModel::gaussian;
    else bad_value(k, v, "uniform or gaussian");
  });
  real("prm.weight_correctness", [](RunConfig& c) -> double& { return c.prm.rubric.weights.correctness; });
  real("prm.weight_relevance", [](RunConfig& c) -> double& { return c.prm.rubric.weights.relevance; });
  real("prm.weight_progression", [](RunConfig& c) -> double& { return c.prm.rubric.weights.progression; });
  real("prm.weight_information_use", [](RunConfig& c) -> double& { return c.prm.rubric.weights.information_use; });
  real("prm.weight_thought", [](RunConfig& c) -> double& { return c.prm.rubric.weights.thought; });
  s.emplace_back("prm.endpoint", [](RunConfig& c, const std::string&, const std::string& v) { c.prm.remote.endpoint = v; });
  s.emplace_back("prm.timeout_ms", [](RunConfig& c, const std::string& k, const std::string& v) {
    c.prm.remote.timeout = std::chrono::milliseconds(to_int(k, v));
  });
  integer("prm.retry_budget", [](RunConfig& c) -> int& { return c.prm.remote.retry_budget; });
  s.emplace_back("prm.backoff_ms", [](RunConfig& c, const std::string& k, const std::string& v) {
    c.prm.remote.backoff_base = std::chrono::milliseconds(to_int(k, v));
  });
  integer("prm.max_inflight", [](RunConfig& c) -> int& { return c.prm.remote.max_inflight; });
  integer("prm.render_window", [](RunConfig& c) -> int& { return c.prm.render_window; });

  real("selection.gamma_low", [](RunConfig& c) -> double& { return c.thresholds.gamma_low; });
  real("selection.gamma_high", [](RunConfig& c) -> double& { return c.thresholds.gamma_high; });
  integer("selection.k", [](RunConfig& c) -> int& { return c.k; });

  integer("pipeline.trials_per_task", [](RunConfig& c) -> int& { return c.trials_per_task; });
  s.emplace_back("pipeline.strategy", [](RunConfig& c, const std::string& k, const std::string& v) {
    try {
      c.strategy = parse_strategy(v);
    } catch (const Error&) {
      bad_value(k, v, "prm_and_verification, verification_only or prm_only");
    }
  });
  s.emplace_back("pipeline.pair_mode", [](RunConfig& c, const std::string& k, const std::string& v) {
    try {
      c.pair_mode = parse_mode(v);
    } catch (const Error&) {
      bad_value(k, v, "expert_pos_policy_neg, expert_pos_expert_neg or policy_pos_policy_neg");
    }
  });
  integer("pipeline.max_pairs_per_step", [](RunConfig& c) -> int& { return c.max_pairs_per_step; });

  real("dpo.beta", [](RunConfig& c) -> double& { return c.dpo.beta; });
  real("dpo.step_size", [](RunConfig& c) -> double& { return c.dpo.step_size; });
  integer("dpo.epochs", [](RunConfig& c) -> int& { return c.dpo.epochs; });

  integer("eval.trials", [](RunConfig& c) -> int& { return c.eval_trials; });
  integer("eval.bon_k", [](RunConfig& c) -> int& { return c.bon_k; });

  u64("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
  s.emplace_back("run.seeds", [](RunConfig& c, const std::string& k, const std::string& v) { c.seeds = to_u64_list(k, v); });
  integer("run.rounds", [](RunConfig& c) -> int& { return c.rounds; });
  integer("run.workers", [](RunConfig& c) -> int& { return c.workers; });
  s.emplace_back("run.method", [](RunConfig& c, const std::string&, const std::string& v) { c.method = v; });
  s.emplace_back("run.output_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; });
  return s;
}

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const auto table = build_setters();
  return table;
}

[[noreturn]] void constraint(const std::string& message) { fail(ErrorCode::config, message); }

}  // namespace

const std::vector<std::string>& config_keys() {
  static const auto keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [k, setter] : setters()) {
    if (k == key) {
      setter(config, key, unquote(trim(value)));
      return;
    }
  }
  fail(ErrorCode::config, "unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (world.tools < 1 || world.arguments < 1 || world.answers < 1)
    constraint("world.tools, world.arguments and world.answers must be positive");
  for (int i = 0; i < 3; ++i)
    if (world.recipe_lengths[i] < 1 || world.recipe_lengths[i] > world.tools)
      constraint("world.recipe_length_l" + std::to_string(i + 1) + " must lie in [1, world.tools]");
  if (!(world.distractor_density >= 0.0 && world.distractor_density <= 1.0))
    constraint("world.distractor_density must lie in [0, 1]");
  if (world.horizon_slack < 0) constraint("world.horizon_slack must be nonnegative");
  if (task_count < 1) constraint("tasks.count must be at least 1");
  if (eval_task_count < 1) constraint("tasks.eval_count must be at least 1");
  if (mix.l1 < 0 || mix.l2 < 0 || mix.l3 < 0 || std::abs(mix.l1 + mix.l2 + mix.l3 - 1.0) > 1e-9)
    constraint("tasks.mix_l1, tasks.mix_l2 and tasks.mix_l3 must be nonnegative and sum to 1");
  if (!(expert_epsilon >= 0.0 && expert_epsilon <= 1.0)) constraint("policy.expert_epsilon must lie in [0, 1]");
  if (demo_trials < 1) constraint("policy.demo_trials must be at least 1");
  if (!(sft.step_size > 0.0)) constraint("policy.sft_step_size must be positive");
  if (sft.epochs < 0) constraint("policy.sft_epochs must be nonnegative");
  if (!(prm.rubric.noise_eta >= 0.0)) constraint("prm.eta must be nonnegative");
  try {
    prm.rubric.weights.validate();
  } catch (const Error& e) {
    constraint(std::string("prm.weight_*: ") + e.what());
  }
  if (prm.mode == PrmConfig::Mode::remote && prm.remote.endpoint.empty())
    constraint("prm.endpoint is required when prm.mode = remote");
  if (prm.remote.timeout.count() <= 0) constraint("prm.timeout_ms must be positive");
  if (prm.remote.retry_budget < 1) constraint("prm.retry_budget must be at least 1");
  if (prm.remote.backoff_base.count() < 0) constraint("prm.backoff_ms must be nonnegative");
  if (prm.remote.max_inflight < 1) constraint("prm.max_inflight must be at least 1");
  if (prm.render_window < 0) constraint("prm.render_window must be nonnegative");
  if (!(thresholds.gamma_low >= 0.0 && thresholds.gamma_high <= 1.0))
    constraint("selection.gamma_low and selection.gamma_high must lie in [0, 1]");
  if (!(thresholds.gamma_low < thresholds.gamma_high))
    constraint("selection.gamma_low must be less than selection.gamma_high");
  if (k < 1) constraint("selection.k must be at least 1");
  if (trials_per_task < 1) constraint("pipeline.trials_per_task must be at least 1");
  if (max_pairs_per_step < 0) constraint("pipeline.max_pairs_per_step must be nonnegative");
  if (!(dpo.beta > 0.0)) constraint("dpo.beta must be positive");
  if (!(dpo.step_size > 0.0)) constraint("dpo.step_size must be positive");
  if (dpo.epochs < 0) constraint("dpo.epochs must be nonnegative");
  if (eval_trials < 1) constraint("eval.trials must be at least 1");
  if (bon_k < 0) constraint("eval.bon_k must be nonnegative");
  if (seeds.empty()) constraint("run.seeds must list at least one seed");
  if (rounds < 1) constraint("run.rounds must be at least 1");
  if (workers < 1) constraint("run.workers must be at least 1");
  if (method.empty() || method.find_first_of("/\\ ") != std::string::npos)
    constraint("run.method must be a nonempty name without spaces or slashes");
  if (output_dir.empty()) constraint("run.output_dir must be nonempty");
}

RoundConfig RunConfig::round_config() const {
  RoundConfig r;
  r.trials_per_task = trials_per_task;
  r.scan.k = k;
  r.scan.thresholds = thresholds;
  r.scan.expert_epsilon = expert_epsilon;
  r.strategy = strategy;
  r.pairs.mode = pair_mode;
  r.pairs.max_pairs_per_step = max_pairs_per_step;
  r.workers = workers;
  return r;
}

IterationConfig RunConfig::iteration_config() const {
  IterationConfig c;
  c.rounds = rounds;
  c.dpo = dpo;
  c.dpo.workers = workers;
  c.expert_epsilon = expert_epsilon;
  return c;
}

MethodSpec RunConfig::method_spec() const {
  MethodSpec m;
  m.label = method;
  m.round = round_config();
  return m;
}

RunConfig parse_config(const std::string& text, bool apply_env) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++number;
    // Strip comments that are not inside a quoted value.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        fail(ErrorCode::config, "config line " + std::to_string(number) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::config, "config line " + std::to_string(number) + ": expected key = value");
    const std::string name = trim(line.substr(0, eq));
    if (name.empty()) fail(ErrorCode::config, "config line " + std::to_string(number) + ": empty key");
    const std::string key = section.empty() ? name : section + "." + name;
    if (seen.count(key))
      fail(ErrorCode::config, "config key '" + key + "' repeated on lines " + std::to_string(seen[key]) + " and " +
                                  std::to_string(number));
    seen[key] = number;
    set_config_value(config, key, line.substr(eq + 1));
  }
  if (apply_env) {
    if (const char* endpoint = std::getenv("CSO_ENDPOINT"); endpoint && *endpoint)
      set_config_value(config, "prm.endpoint", endpoint);
    if (const char* workers = std::getenv("CSO_WORKERS"); workers && *workers)
      set_config_value(config, "run.workers", workers);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path, bool apply_env) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_artifact, "missing config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), apply_env);
}

}  // namespace cso
