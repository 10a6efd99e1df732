#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cso/pipeline.hpp"
#include "cso/policy.hpp"
#include "cso/prm.hpp"
#include "cso/train.hpp"
#include "cso/world.hpp"

namespace cso {

struct RunConfig {
  // [world]
  WorldConfig world;
  // [tasks]
  int task_count = 200;
  int eval_task_count = 200;
  DifficultyMix mix;
  std::uint64_t task_seed = 11;
  std::uint64_t eval_task_seed = 12;
  // [policy]
  FeatureConfig features;
  double expert_epsilon = 0.05;
  int demo_trials = 1;
  SftConfig sft{0.5, 1000, 1};
  // [prm]
  PrmConfig prm;
  // [selection]
  SelectionThresholds thresholds;
  int k = 5;
  // [pipeline]
  int trials_per_task = 4;
  SelectionStrategy strategy = SelectionStrategy::prm_and_verification;
  PairSourceMode pair_mode = PairSourceMode::expert_pos_policy_neg;
  int max_pairs_per_step = 0;
  // [dpo]
  DpoConfig dpo{0.5, 1.0, 1000, 1};
  // [eval]
  int eval_trials = 1;
  int bon_k = 0;
  // [run]
  std::uint64_t seed = 5;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int rounds = 2;
  int workers = 1;
  std::string method = "cso";
  std::filesystem::path output_dir = "runs/default";

  /// Checks every cross-field constraint; errors name the offending keys.
  void validate() const;

  RoundConfig round_config() const;
  IterationConfig iteration_config() const;
  MethodSpec method_spec() const;
};

/// Sets one dotted key ("selection.gamma_low") from its textual value.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Parses key = value lines under [section] headers. Absent keys keep their
/// defaults and unknown keys are rejected. CSO_ENDPOINT and CSO_WORKERS
/// override prm.endpoint and run.workers. The result is validated.
RunConfig parse_config(const std::string& text, bool apply_env = true);
RunConfig load_config(const std::filesystem::path& path, bool apply_env = true);

/// Every recognised dotted key, in documentation order.
const std::vector<std::string>& config_keys();

}  // namespace cso
