#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cso/pipeline.hpp"
#include "cso/policy.hpp"
#include "cso/world.hpp"

namespace fixtures {

inline cso::DifficultyMix only(cso::Difficulty level) {
  cso::DifficultyMix m{0.0, 0.0, 0.0};
  if (level == cso::Difficulty::L1) m.l1 = 1.0;
  if (level == cso::Difficulty::L2) m.l2 = 1.0;
  if (level == cso::Difficulty::L3) m.l3 = 1.0;
  return m;
}

inline cso::Featurizer featurizer(const cso::WorldConfig& world = {}) {
  return cso::Featurizer(cso::Vocabulary(world), cso::FeatureConfig{});
}

/// Executes the oracle to termination.
inline cso::Trajectory oracle_rollout(const cso::TaskSpec& task) {
  cso::Trajectory t;
  t.id = task.task_id + "/oracle";
  t.task_id = task.task_id;
  auto state = cso::initial_state(task);
  while (!state.terminal) {
    const int a = cso::oracle_action(task, state);
    const auto digest = cso::state_digest(state);
    auto next = cso::transition(task, state, a);
    t.steps.push_back({digest, a, next.observation});
    state = std::move(next.state);
  }
  t.end = cso::EndReason::answer;
  t.outcome = cso::verify_outcome(task, t);
  return t;
}

/// A small SFT policy trained on expert demos; cached per process.
inline const cso::PolicyParameters& small_sft_policy() {
  static const cso::PolicyParameters params = [] {
    const auto tasks = cso::generate_tasks(60, cso::DifficultyMix{}, cso::WorldConfig{}, 101);
    const auto fz = featurizer();
    const auto zero = cso::PolicyParameters::zeros(72, fz.dimension());
    const auto demos_raw = cso::collect_rollouts(zero, fz, tasks, 1, 7, 0, 1, {cso::Actor::expert, 0.05});
    cso::TaskIndex index(tasks);
    cso::DemoDataset demos;
    for (const auto& t : demos_raw)
      if (t.outcome == 1) demos.add(index.at(t.task_id), t);
    return cso::sft_train(zero, fz, demos, {0.5, 200, 1}).params;
  }();
  return params;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cso-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
