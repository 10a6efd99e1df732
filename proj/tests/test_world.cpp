#include <doctest.h>

#include <set>
#include <sstream>

#include "cso/error.hpp"
#include "cso/world.hpp"
#include "fixtures.hpp"

using namespace cso;

TEST_CASE("generate_tasks: single L1 task has recipe length 2") {
  const auto tasks = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 7);
  REQUIRE(tasks.size() == 1);
  CHECK(tasks[0].length() == 2);
  CHECK(tasks[0].difficulty == Difficulty::L1);
  CHECK(tasks[0].horizon() == 6);
}

TEST_CASE("generate_tasks is deterministic") {
  const auto a = generate_tasks(100, DifficultyMix{}, WorldConfig{}, 7);
  const auto b = generate_tasks(100, DifficultyMix{}, WorldConfig{}, 7);
  std::ostringstream sa, sb;
  write_tasks(sa, a);
  write_tasks(sb, b);
  CHECK(sa.str() == sb.str());
  const auto c = generate_tasks(100, DifficultyMix{}, WorldConfig{}, 8);
  CHECK(a != c);
}

TEST_CASE("generate_tasks validates its inputs") {
  CHECK_THROWS_AS(generate_tasks(0, DifficultyMix{}, WorldConfig{}, 1), Error);
  CHECK_THROWS_AS(generate_tasks(5, DifficultyMix{0.5, 0.5, 0.5}, WorldConfig{}, 1), Error);
  WorldConfig tiny;
  tiny.tools = 3;
  CHECK_THROWS_AS(generate_tasks(5, DifficultyMix{}, tiny, 1), Error);
}

TEST_CASE("every L3 oracle replay succeeds") {
  for (const auto& task : generate_tasks(10, fixtures::only(Difficulty::L3), WorldConfig{}, 3)) {
    CHECK(task.length() == 6);
    CHECK(fixtures::oracle_rollout(task).outcome == 1);
  }
}

TEST_CASE("oracle solves 50 mixed tasks and planted sets are well formed") {
  for (const auto& task : generate_tasks(50, DifficultyMix{}, WorldConfig{}, 21)) {
    const auto t = fixtures::oracle_rollout(task);
    CHECK(t.outcome == 1);
    CHECK(t.length() == task.length() + 1);
    for (int p : task.planted_critical) {
      CHECK(p >= 1);
      CHECK(p <= task.length());
    }
    CHECK_FALSE(task.planted_critical.empty());
  }
}

TEST_CASE("transition: correct invoke advances and reveals") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L2), WorldConfig{}, 5)[0];
  const auto vocab = task.vocabulary();
  const auto s0 = initial_state(task);
  CHECK(oracle_action(task, s0) == vocab.invoke(task.recipe[0].tool, task.recipe[0].argument));
  const auto r = transition(task, s0, oracle_action(task, s0));
  CHECK(r.state.step_index == 2);
  CHECK(r.state.progress == 2);
  CHECK(vocab.is_reveal(r.observation.payload));
  CHECK(vocab.revealed_argument(r.observation.payload) == task.recipe[1].argument);
  CHECK_FALSE(r.observation.is_terminal);
  // Purity.
  CHECK(transition(task, s0, oracle_action(task, s0)).state == r.state);
}

TEST_CASE("transition: answers terminate and verify_outcome reads the last action") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 9)[0];
  const auto vocab = task.vocabulary();
  auto state = initial_state(task);
  const auto r = transition(task, state, vocab.answer(task.target_answer));
  CHECK(r.observation.is_terminal);
  CHECK(r.state.terminal);
  CHECK_THROWS_AS(transition(task, r.state, 0), Error);
  CHECK_THROWS_AS(transition(task, state, vocab.action_count()), Error);
  CHECK_THROWS_AS(transition(task, state, -1), Error);

  Trajectory right;
  right.task_id = task.task_id;
  right.steps.push_back({state_digest(state), vocab.answer(task.target_answer), r.observation});
  CHECK(verify_outcome(task, right) == 1);
  Trajectory wrong = right;
  wrong.steps[0].action = vocab.answer((task.target_answer + 1) % vocab.answers());
  CHECK(verify_outcome(task, wrong) == 0);
  Trajectory mismatched = right;
  mismatched.task_id = "other";
  CHECK_THROWS_AS(verify_outcome(task, mismatched), Error);
}

TEST_CASE("horizon exhaustion without an answer fails") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 9)[0];
  const auto vocab = task.vocabulary();
  const int bad = (oracle_action(task, initial_state(task)) + 1) % (vocab.tools() * vocab.arguments());
  auto state = initial_state(task);
  Trajectory t;
  t.task_id = task.task_id;
  while (!state.terminal) {
    auto next = transition(task, state, bad);
    t.steps.push_back({state_digest(state), bad, next.observation});
    state = next.state;
  }
  CHECK(t.length() == task.horizon());
  CHECK(verify_outcome(task, t) == 0);
}

TEST_CASE("criticality: distractor at a planted step poisons the oracle continuation") {
  int checked = 0;
  for (const auto& task : generate_tasks(40, DifficultyMix{}, WorldConfig{}, 13)) {
    for (int p : task.planted_critical) {
      auto state = initial_state(task);
      while (state.progress < p) state = transition(task, state, oracle_action(task, state)).state;
      const auto d = distractor_action(task, state);
      REQUIRE(d.has_value());
      CHECK(classify_step(task, state, *d) == StepEffect::decoy);
      state = transition(task, state, *d).state;
      CHECK(state.poisoned);
      CHECK_FALSE(distractor_action(task, state).has_value());
      std::vector<int> actions;
      for (const auto& h : state.history) actions.push_back(h.action);
      while (!state.terminal) {
        const int a = oracle_action(task, state);
        actions.push_back(a);
        state = transition(task, state, a).state;
      }
      Trajectory t;
      t.task_id = task.task_id;
      const auto replayed = replay_actions(task, actions);
      CHECK(replayed == state);
      for (const auto& h : state.history) t.steps.push_back({0, h.action, {h.payload, false}});
      t.steps.back().observation.is_terminal = true;
      CHECK(verify_outcome(task, t) == 0);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("action encoding is a bijection") {
  const Vocabulary v{WorldConfig{}};
  CHECK(v.action_count() == 72);
  std::set<int> seen;
  for (int tool = 0; tool < v.tools(); ++tool)
    for (int arg = 0; arg < v.arguments(); ++arg) {
      const int a = v.invoke(tool, arg);
      CHECK(v.tool_of(a) == tool);
      CHECK(v.argument_of(a) == arg);
      CHECK_FALSE(v.is_answer(a));
      seen.insert(a);
    }
  for (int value = 0; value < v.answers(); ++value) {
    const int a = v.answer(value);
    CHECK(v.is_answer(a));
    CHECK(v.value_of(a) == value);
    seen.insert(a);
  }
  CHECK(seen.size() == 72);
  CHECK(*seen.rbegin() == 71);
}

TEST_CASE("task and trajectory JSONL round trip") {
  const auto tasks = generate_tasks(5, DifficultyMix{}, WorldConfig{}, 4);
  std::ostringstream out;
  write_tasks(out, tasks);
  CHECK(out.str().find("\"world_schema\":1") != std::string::npos);
  std::istringstream in(out.str());
  CHECK(read_tasks(in) == tasks);
  const auto t = fixtures::oracle_rollout(tasks[2]);
  CHECK(trajectory_from_json_line(trajectory_to_json_line(t)) == t);
  auto bad = task_to_json_line(tasks[0]);
  bad.replace(bad.find("\"world_schema\":1"), 16, "\"world_schema\":9");
  CHECK_THROWS_AS(task_from_json_line(bad), Error);
}
