#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cso/rng.hpp"

namespace cso {

enum class Difficulty : std::uint8_t { L1 = 1, L2 = 2, L3 = 3 };

const char* difficulty_name(Difficulty level) noexcept;
Difficulty parse_difficulty(std::string_view name);

struct WorldConfig {
  int tools = 8;
  int arguments = 8;
  int answers = 8;
  std::array<int, 3> recipe_lengths{2, 4, 6};
  /// Probability that a recipe position (other than the first) is planted
  /// with a distractor tool.
  double distractor_density = 0.5;
  int horizon_slack = 4;

  int recipe_length(Difficulty level) const {
    return recipe_lengths[static_cast<int>(level) - 1];
  }
  void validate() const;
};

struct DifficultyMix {
  double l1 = 0.5;
  double l2 = 0.3;
  double l3 = 0.2;
};

/// Composite action vocabulary and observation payload tokens.
///
/// Actions: index = tool * arguments + argument for invocations, followed by
/// one answer action per answer value.
/// Payloads: a reveal of (argument, tool hint) for the next recipe position,
/// a reveal of the final answer value, an error token for calls that do not
/// progress, and an acknowledgement for answers.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const WorldConfig& config)
      : tools_(config.tools), arguments_(config.arguments), answers_(config.answers) {}

  int tools() const noexcept { return tools_; }
  int arguments() const noexcept { return arguments_; }
  int answers() const noexcept { return answers_; }
  int action_count() const noexcept { return tools_ * arguments_ + answers_; }

  int invoke(int tool, int argument) const noexcept { return tool * arguments_ + argument; }
  int answer(int value) const noexcept { return tools_ * arguments_ + value; }

  bool is_answer(int action) const noexcept { return action >= tools_ * arguments_; }
  int tool_of(int action) const noexcept { return action / arguments_; }
  int argument_of(int action) const noexcept { return action % arguments_; }
  int value_of(int action) const noexcept { return action - tools_ * arguments_; }
  bool valid_action(int action) const noexcept { return action >= 0 && action < action_count(); }

  int reveal_payload(int argument, int tool_hint) const noexcept {
    return argument * tools_ + tool_hint;
  }
  int final_payload(int value) const noexcept { return arguments_ * tools_ + value; }
  int error_payload() const noexcept { return arguments_ * tools_ + answers_; }
  int ack_payload() const noexcept { return error_payload() + 1; }

  bool is_reveal(int payload) const noexcept { return payload >= 0 && payload < arguments_ * tools_; }
  bool is_final_reveal(int payload) const noexcept {
    return payload >= arguments_ * tools_ && payload < error_payload();
  }
  int revealed_argument(int payload) const noexcept { return payload / tools_; }
  int hinted_tool(int payload) const noexcept { return payload % tools_; }
  int revealed_value(int payload) const noexcept { return payload - arguments_ * tools_; }

  std::string describe_action(int action) const;

 private:
  int tools_ = 8;
  int arguments_ = 8;
  int answers_ = 8;
};

struct ToolCall {
  int tool = 0;
  int argument = 0;
  bool operator==(const ToolCall&) const = default;
};

struct TaskSpec {
  std::string task_id;
  /// Recipe tool ids in order, then the first argument offset by `tools`.
  std::vector<int> query;
  std::vector<ToolCall> recipe;
  int target_answer = 0;
  Difficulty difficulty = Difficulty::L1;
  /// 1-based recipe positions carrying a distractor tool, ascending.
  std::vector<int> planted_critical;
  /// Per position (0-based): distractor tool id, or -1.
  std::vector<int> distractor_tool;
  /// Per position (0-based): decoy value revealed when the distractor fires.
  std::vector<int> decoy;
  std::uint64_t seed = 0;
  int horizon_slack = 4;
  int tools = 8;
  int arguments = 8;
  int answers = 8;

  int length() const noexcept { return static_cast<int>(recipe.size()); }
  int horizon() const noexcept { return length() + horizon_slack; }
  bool is_planted(int position) const noexcept;
  Vocabulary vocabulary() const;
  bool operator==(const TaskSpec&) const = default;
};

struct HistoryEntry {
  int action = 0;
  int payload = 0;
  bool operator==(const HistoryEntry&) const = default;
};

struct Observation {
  int payload = 0;
  bool is_terminal = false;
  bool operator==(const Observation&) const = default;
};

struct WorldState {
  std::string task_id;
  int step_index = 1;
  std::vector<HistoryEntry> history;
  /// Argument (or answer value in the answer phase) unlocked most recently;
  /// -1 when none.
  int revealed_argument = -1;
  /// 1-based index of the next recipe call that truly advances the chain;
  /// length + 1 once the recipe is complete.
  int progress = 1;
  bool poisoned = false;
  bool terminal = false;

  bool operator==(const WorldState&) const = default;
};

enum class StepEffect { advance, decoy, no_op, correct_answer, wrong_answer };

/// Ground-truth effect of taking `action` in `state`, without applying it.
StepEffect classify_step(const TaskSpec& task, const WorldState& state, int action);

WorldState initial_state(const TaskSpec& task);

struct TransitionResult {
  Observation observation;
  WorldState state;
};

TransitionResult transition(const TaskSpec& task, const WorldState& state, int action);

int oracle_action(const TaskSpec& task, const WorldState& state);

/// The distractor action available at this state, if the current recipe
/// position is planted and the chain is intact.
std::optional<int> distractor_action(const TaskSpec& task, const WorldState& state);

/// Deterministic digest of (task id, history).
std::uint64_t state_digest(const WorldState& state) noexcept;

std::vector<TaskSpec> generate_tasks(int count, const DifficultyMix& mix,
                                     const WorldConfig& config, std::uint64_t seed);

struct StepRecord {
  std::uint64_t state_digest = 0;
  int action = 0;
  Observation observation;
  bool operator==(const StepRecord&) const = default;
};

enum class EndReason { answer, horizon };

struct RngTrace {
  std::uint64_t seed = 0;
  std::uint64_t draws = 0;
  bool operator==(const RngTrace&) const = default;
};

struct Trajectory {
  std::string id;
  std::string task_id;
  int round = 0;
  std::vector<StepRecord> steps;
  int outcome = 0;
  EndReason end = EndReason::horizon;
  RngTrace rng_trace;

  int length() const noexcept { return static_cast<int>(steps.size()); }
  std::vector<int> actions() const;
  bool operator==(const Trajectory&) const = default;
};

/// 1 iff the trajectory ended with answer(target_answer).
int verify_outcome(const TaskSpec& task, const Trajectory& trajectory);

/// Replays a full sequence of actions from the initial state.
WorldState replay_actions(const TaskSpec& task, std::span<const int> actions);

/// Task sets as JSONL, one task per line.
std::string task_to_json_line(const TaskSpec& task);
TaskSpec task_from_json_line(const std::string& line);
void write_tasks(std::ostream& out, std::span<const TaskSpec> tasks);
std::vector<TaskSpec> read_tasks(std::istream& in);

std::string trajectory_to_json_line(const Trajectory& trajectory);
Trajectory trajectory_from_json_line(const std::string& line);

}  // namespace cso
