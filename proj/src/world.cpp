#include "cso/world.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cso/error.hpp"

namespace cso {

using nlohmann::json;

namespace {

constexpr int kWorldSchema = 1;

int reveal_after_advance(const TaskSpec& task, int next_position) {
  const auto vocab = task.vocabulary();
  if (next_position > task.length()) return vocab.final_payload(task.target_answer);
  const auto& call = task.recipe[next_position - 1];
  const int hint = task.is_planted(next_position) ? task.distractor_tool[next_position - 1] : call.tool;
  return vocab.reveal_payload(call.argument, hint);
}

int revealed_of(const Vocabulary& vocab, int payload) {
  if (vocab.is_reveal(payload)) return vocab.revealed_argument(payload);
  return vocab.revealed_value(payload);
}

}  // namespace

const char* difficulty_name(Difficulty level) noexcept {
  switch (level) {
    case Difficulty::L1: return "L1";
    case Difficulty::L2: return "L2";
    case Difficulty::L3: return "L3";
  }
  return "?";
}

Difficulty parse_difficulty(std::string_view name) {
  if (name == "L1") return Difficulty::L1;
  if (name == "L2") return Difficulty::L2;
  if (name == "L3") return Difficulty::L3;
  fail(ErrorCode::invalid_argument, "unknown difficulty '" + std::string(name) + "'");
}

void WorldConfig::validate() const {
  if (tools < 2 || arguments < 2 || answers < 2)
    fail(ErrorCode::invalid_argument, "vocabulary too small: need at least 2 tools, arguments and answers");
  for (int len : recipe_lengths) {
    if (len < 1) fail(ErrorCode::invalid_argument, "recipe length must be positive");
    if (len > tools)
      fail(ErrorCode::invalid_argument,
           "vocabulary too small for recipe length " + std::to_string(len) + " with " +
               std::to_string(tools) + " tools");
  }
  if (!(distractor_density >= 0.0 && distractor_density <= 1.0))
    fail(ErrorCode::invalid_argument, "distractor_density must lie in [0, 1]");
  if (horizon_slack < 0) fail(ErrorCode::invalid_argument, "horizon_slack must be nonnegative");
}

std::string Vocabulary::describe_action(int action) const {
  if (!valid_action(action)) return "invalid(" + std::to_string(action) + ")";
  if (is_answer(action)) return "answer(" + std::to_string(value_of(action)) + ")";
  return "invoke(" + std::to_string(tool_of(action)) + "," + std::to_string(argument_of(action)) + ")";
}

bool TaskSpec::is_planted(int position) const noexcept {
  return std::binary_search(planted_critical.begin(), planted_critical.end(), position);
}

Vocabulary TaskSpec::vocabulary() const {
  WorldConfig config;
  config.tools = tools;
  config.arguments = arguments;
  config.answers = answers;
  return Vocabulary(config);
}

std::vector<int> Trajectory::actions() const {
  std::vector<int> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.action);
  return out;
}

WorldState initial_state(const TaskSpec& task) {
  WorldState state;
  state.task_id = task.task_id;
  state.revealed_argument = task.recipe.empty() ? -1 : task.recipe.front().argument;
  return state;
}

StepEffect classify_step(const TaskSpec& task, const WorldState& state, int action) {
  const auto vocab = task.vocabulary();
  if (vocab.is_answer(action))
    return vocab.value_of(action) == task.target_answer ? StepEffect::correct_answer
                                                        : StepEffect::wrong_answer;
  if (state.poisoned || state.progress > task.length()) return StepEffect::no_op;
  const auto& call = task.recipe[state.progress - 1];
  const int tool = vocab.tool_of(action);
  const int argument = vocab.argument_of(action);
  if (tool == call.tool && argument == call.argument) return StepEffect::advance;
  if (task.is_planted(state.progress) && tool == task.distractor_tool[state.progress - 1] &&
      argument == call.argument)
    return StepEffect::decoy;
  return StepEffect::no_op;
}

TransitionResult transition(const TaskSpec& task, const WorldState& state, int action) {
  const auto vocab = task.vocabulary();
  require(vocab.valid_action(action), ErrorCode::invalid_argument,
          "action index " + std::to_string(action) + " outside vocabulary of size " +
              std::to_string(vocab.action_count()));
  require(state.task_id == task.task_id, ErrorCode::invalid_argument,
          "state belongs to task '" + state.task_id + "', not '" + task.task_id + "'");
  require(!state.terminal, ErrorCode::invalid_argument, "transition after termination");

  TransitionResult result{Observation{}, state};
  WorldState& next = result.state;
  int payload = vocab.error_payload();
  switch (classify_step(task, state, action)) {
    case StepEffect::advance:
      next.progress = state.progress + 1;
      payload = reveal_after_advance(task, next.progress);
      next.revealed_argument = revealed_of(vocab, payload);
      break;
    case StepEffect::decoy: {
      next.poisoned = true;
      const int apparent = state.progress + 1;
      const int decoy = task.decoy[state.progress - 1];
      if (apparent > task.length()) {
        payload = vocab.final_payload(decoy);
      } else {
        // Same tool hint as a genuine advance; only the argument is wrong.
        const int genuine = reveal_after_advance(task, apparent);
        payload = vocab.reveal_payload(decoy, vocab.hinted_tool(genuine));
      }
      next.revealed_argument = decoy;
      break;
    }
    case StepEffect::no_op:
      break;
    case StepEffect::correct_answer:
    case StepEffect::wrong_answer:
      payload = vocab.ack_payload();
      next.terminal = true;
      break;
  }
  next.history.push_back({action, payload});
  next.step_index = state.step_index + 1;
  if (next.step_index > task.horizon()) next.terminal = true;
  result.observation = Observation{payload, next.terminal};
  return result;
}

int oracle_action(const TaskSpec& task, const WorldState& state) {
  const auto vocab = task.vocabulary();
  if (state.progress > task.length()) return vocab.answer(task.target_answer);
  const auto& call = task.recipe[state.progress - 1];
  return vocab.invoke(call.tool, call.argument);
}

std::optional<int> distractor_action(const TaskSpec& task, const WorldState& state) {
  if (state.poisoned || state.progress > task.length() || !task.is_planted(state.progress))
    return std::nullopt;
  const auto vocab = task.vocabulary();
  return vocab.invoke(task.distractor_tool[state.progress - 1],
                      task.recipe[state.progress - 1].argument);
}

std::uint64_t state_digest(const WorldState& state) noexcept {
  std::uint64_t h = hash_string(state.task_id);
  for (const auto& entry : state.history) {
    h = mix64(h ^ static_cast<std::uint64_t>(entry.action));
    h = mix64(h ^ (static_cast<std::uint64_t>(entry.payload) << 20));
  }
  return h;
}

WorldState replay_actions(const TaskSpec& task, std::span<const int> actions) {
  WorldState state = initial_state(task);
  for (int a : actions) state = transition(task, state, a).state;
  return state;
}

int verify_outcome(const TaskSpec& task, const Trajectory& trajectory) {
  require(trajectory.task_id == task.task_id, ErrorCode::invalid_argument,
          "trajectory '" + trajectory.id + "' belongs to task '" + trajectory.task_id +
              "', not '" + task.task_id + "'");
  if (trajectory.steps.empty()) return 0;
  const auto& last = trajectory.steps.back();
  require(last.observation.is_terminal, ErrorCode::invalid_argument,
          "trajectory '" + trajectory.id + "' has not terminated");
  const auto vocab = task.vocabulary();
  return vocab.is_answer(last.action) && vocab.value_of(last.action) == task.target_answer ? 1 : 0;
}

std::vector<TaskSpec> generate_tasks(int count, const DifficultyMix& mix,
                                     const WorldConfig& config, std::uint64_t seed) {
  require(count >= 1, ErrorCode::invalid_argument, "task count must be at least 1");
  const double total = mix.l1 + mix.l2 + mix.l3;
  if (mix.l1 < 0 || mix.l2 < 0 || mix.l3 < 0 || std::abs(total - 1.0) > 1e-9)
    fail(ErrorCode::invalid_argument, "difficulty proportions must be nonnegative and sum to 1");
  config.validate();

  std::vector<TaskSpec> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    TaskSpec task;
    task.seed = derive_seed(seed, {"task", i});
    RandomStream rng(task.seed);
    char id[48];
    std::snprintf(id, sizeof id, "%llu-%05d", static_cast<unsigned long long>(seed), i);
    task.task_id = id;
    task.tools = config.tools;
    task.arguments = config.arguments;
    task.answers = config.answers;
    task.horizon_slack = config.horizon_slack;

    const double u = rng.uniform();
    task.difficulty = u < mix.l1 ? Difficulty::L1 : (u < mix.l1 + mix.l2 ? Difficulty::L2 : Difficulty::L3);
    const int length = config.recipe_length(task.difficulty);

    std::vector<int> tool_pool(static_cast<std::size_t>(config.tools));
    std::iota(tool_pool.begin(), tool_pool.end(), 0);
    for (int p = 0; p < length; ++p) {
      const int j = p + rng.uniform_int(config.tools - p);
      std::swap(tool_pool[p], tool_pool[j]);
      task.recipe.push_back({tool_pool[p], rng.uniform_int(config.arguments)});
    }
    task.target_answer = rng.uniform_int(config.answers);

    const int first_plantable = length >= 2 ? 2 : 1;
    for (int p = first_plantable; p <= length; ++p)
      if (rng.uniform() < config.distractor_density) task.planted_critical.push_back(p);
    if (task.planted_critical.empty() && config.distractor_density > 0.0)
      task.planted_critical.push_back(first_plantable + rng.uniform_int(length - first_plantable + 1));

    task.distractor_tool.assign(static_cast<std::size_t>(length), -1);
    task.decoy.assign(static_cast<std::size_t>(length), -1);
    for (int p : task.planted_critical) {
      const int true_tool = task.recipe[p - 1].tool;
      task.distractor_tool[p - 1] = (true_tool + 1 + rng.uniform_int(config.tools - 1)) % config.tools;
      const bool last = p == length;
      const int domain = last ? config.answers : config.arguments;
      const int genuine = last ? task.target_answer : task.recipe[p].argument;
      task.decoy[p - 1] = (genuine + 1 + rng.uniform_int(domain - 1)) % domain;
    }

    for (const auto& call : task.recipe) task.query.push_back(call.tool);
    task.query.push_back(config.tools + task.recipe.front().argument);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::string task_to_json_line(const TaskSpec& task) {
  json j;
  j["world_schema"] = kWorldSchema;
  j["task_id"] = task.task_id;
  j["difficulty"] = difficulty_name(task.difficulty);
  j["query"] = task.query;
  json recipe = json::array();
  for (const auto& call : task.recipe) recipe.push_back({call.tool, call.argument});
  j["recipe"] = recipe;
  j["target_answer"] = task.target_answer;
  j["planted_critical"] = task.planted_critical;
  j["distractor_tool"] = task.distractor_tool;
  j["decoy"] = task.decoy;
  j["seed"] = task.seed;
  j["tools"] = task.tools;
  j["arguments"] = task.arguments;
  j["answers"] = task.answers;
  j["horizon_slack"] = task.horizon_slack;
  return j.dump();
}

TaskSpec task_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("malformed task record: ") + e.what());
  }
  if (j.value("world_schema", -1) != kWorldSchema)
    fail(ErrorCode::schema_mismatch, "task record has world_schema " +
                                         std::to_string(j.value("world_schema", -1)) + ", expected 1");
  try {
    TaskSpec task;
    task.task_id = j.at("task_id").get<std::string>();
    task.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
    task.query = j.at("query").get<std::vector<int>>();
    for (const auto& c : j.at("recipe")) task.recipe.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    task.target_answer = j.at("target_answer").get<int>();
    task.planted_critical = j.at("planted_critical").get<std::vector<int>>();
    task.distractor_tool = j.at("distractor_tool").get<std::vector<int>>();
    task.decoy = j.at("decoy").get<std::vector<int>>();
    task.seed = j.at("seed").get<std::uint64_t>();
    task.tools = j.at("tools").get<int>();
    task.arguments = j.at("arguments").get<int>();
    task.answers = j.at("answers").get<int>();
    task.horizon_slack = j.at("horizon_slack").get<int>();
    return task;
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("malformed task record: ") + e.what());
  }
}

void write_tasks(std::ostream& out, std::span<const TaskSpec> tasks) {
  for (const auto& task : tasks) out << task_to_json_line(task) << '\n';
}

std::vector<TaskSpec> read_tasks(std::istream& in) {
  std::vector<TaskSpec> tasks;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) tasks.push_back(task_from_json_line(line));
  return tasks;
}

namespace {
const char* end_name(EndReason end) { return end == EndReason::answer ? "answer" : "horizon"; }
}  // namespace

std::string trajectory_to_json_line(const Trajectory& t) {
  json j;
  j["schema"] = 1;
  j["id"] = t.id;
  j["task_id"] = t.task_id;
  j["round"] = t.round;
  j["outcome"] = t.outcome;
  j["end"] = end_name(t.end);
  j["rollout_seed"] = t.rng_trace.seed;
  j["draws"] = t.rng_trace.draws;
  json steps = json::array();
  for (const auto& s : t.steps)
    steps.push_back({s.state_digest, s.action, s.observation.payload, s.observation.is_terminal});
  j["steps"] = steps;
  return j.dump();
}

Trajectory trajectory_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    if (j.value("schema", -1) != 1)
      fail(ErrorCode::schema_mismatch, "trajectory record schema mismatch, expected 1");
    Trajectory t;
    t.id = j.at("id").get<std::string>();
    t.task_id = j.at("task_id").get<std::string>();
    t.round = j.at("round").get<int>();
    t.outcome = j.at("outcome").get<int>();
    t.end = j.at("end").get<std::string>() == "answer" ? EndReason::answer : EndReason::horizon;
    t.rng_trace.seed = j.at("rollout_seed").get<std::uint64_t>();
    t.rng_trace.draws = j.at("draws").get<std::uint64_t>();
    for (const auto& s : j.at("steps"))
      t.steps.push_back({s.at(0).get<std::uint64_t>(), s.at(1).get<int>(),
                         Observation{s.at(2).get<int>(), s.at(3).get<bool>()}});
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("malformed trajectory record: ") + e.what());
  }
}

}  // namespace cso
