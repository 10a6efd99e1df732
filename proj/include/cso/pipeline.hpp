#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cso/policy.hpp"
#include "cso/prm.hpp"
#include "cso/world.hpp"

namespace cso {

enum class PairSourceMode { expert_pos_policy_neg, expert_pos_expert_neg, policy_pos_policy_neg };

const char* mode_name(PairSourceMode mode) noexcept;
PairSourceMode parse_mode(std::string_view name);

/// Which filters stand between a failed step and a preference pair.
enum class SelectionStrategy {
  prm_and_verification,  // threshold selection, then branch verification
  verification_only,     // branch every alternative at every step
  prm_only,              // threshold selection, no branch rollouts
};

const char* strategy_name(SelectionStrategy strategy) noexcept;
SelectionStrategy parse_strategy(std::string_view name);

/// Lookup of tasks by id; keeps the original order.
class TaskIndex {
 public:
  explicit TaskIndex(std::vector<TaskSpec> tasks);

  const TaskSpec& at(const std::string& task_id) const;
  const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }

 private:
  std::vector<TaskSpec> tasks_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct FailedTrajectorySet {
  int round_index = 0;
  std::vector<Trajectory> trajectories;
  int total_steps = 0;

  void add(Trajectory trajectory);
};

std::string trajectory_id(const std::string& task_id, int round, int trial);

/// Rolls out the policy `trials` times per task. Trajectory ids and seeds
/// are keyed by (task, round, trial) so results do not depend on workers.
std::vector<Trajectory> collect_rollouts(const PolicyParameters& params, const Featurizer& featurizer,
                                         const std::vector<TaskSpec>& tasks, int trials,
                                         std::uint64_t master_seed, int round, int workers,
                                         const RolloutSpec& spec = {});

FailedTrajectorySet collect_failed(const PolicyParameters& params, const Featurizer& featurizer,
                                   const std::vector<TaskSpec>& tasks, int trials, std::uint64_t master_seed,
                                   int round, int workers);

/// Keeps the y = 0 members of `rollouts`.
FailedTrajectorySet failed_subset(const std::vector<Trajectory>& rollouts, int round);

/// Reconstructs s_t (1-based t) by replaying steps 1..t-1 of `parent`,
/// checking every recorded digest and observation on the way.
WorldState replay_prefix(const TaskSpec& task, const Trajectory& parent, int t);

struct ScanConfig {
  int k = 5;
  SelectionThresholds thresholds;
  /// Who proposes the k alternatives at each step.
  Actor proposer = Actor::expert;
  double expert_epsilon = 0.05;
  /// Score the policy action and alternatives with the PRM.
  bool score = true;
};

/// One step of a failed trajectory with its proposed alternatives.
struct ScoredStep {
  std::size_t trajectory_index = 0;
  std::string trajectory_id;
  std::string task_id;
  int step_index = 1;
  int policy_action = 0;
  PrmScore policy_score;
  std::vector<ScoredAlternative> alternatives;
  std::uint64_t state_digest = 0;

  CandidateCriticalStep as_candidate() const;
};

/// Proposes and scores k alternatives at every step of every failed
/// trajectory. Alternative j at step t draws from its own stream, so the
/// first j alternatives do not depend on k.
std::vector<ScoredStep> scan_steps(const FailedTrajectorySet& failed, const PolicyParameters& params,
                                   const Featurizer& featurizer, const TaskIndex& tasks, const ScanConfig& config,
                                   const ProcessRewardModel& prm, std::uint64_t master_seed, int workers);

/// Threshold selection over a scan, in trajectory order then step order.
std::vector<CandidateCriticalStep> select_from_scan(const FailedTrajectorySet& failed,
                                                    const std::vector<ScoredStep>& scan,
                                                    const SelectionThresholds& thresholds);

std::vector<CandidateCriticalStep> scan_candidates(const FailedTrajectorySet& failed, const PolicyParameters& params,
                                                   const Featurizer& featurizer, const TaskIndex& tasks,
                                                   const ScanConfig& config, const ProcessRewardModel& prm,
                                                   std::uint64_t master_seed, int workers);

struct BranchResult {
  std::string parent_trajectory_id;
  int step_index = 1;
  ScoredAlternative alternative;
  Trajectory branched_trajectory;
  int outcome = 0;
  std::uint64_t rng_seed = 0;
};

/// Replays steps 1..t-1 of `parent`, takes `alternative` at step t and lets
/// the policy continue to termination using `seed`.
BranchResult branch_rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                            const Trajectory& parent, int t, const ScoredAlternative& alternative,
                            std::uint64_t seed);

std::uint64_t branch_seed(std::uint64_t master_seed, const std::string& parent_id, int t, int sample_index);

/// A selected step together with every branch rollout run for it.
struct BranchedStep {
  CandidateCriticalStep candidate;
  std::string task_id;
  std::vector<BranchResult> branches;
};

struct VerifiedCriticalStep {
  CandidateCriticalStep candidate;
  std::vector<BranchResult> successes;
};

std::vector<VerifiedCriticalStep> verified_steps(const std::vector<BranchedStep>& branched);

/// Which alternatives get a branch rollout.
enum class BranchBudget {
  above_gamma_high,  // only alternatives scored above gamma_high
  all,               // every alternative
};

std::vector<BranchedStep> verify_candidates(const std::vector<CandidateCriticalStep>& candidates,
                                            const FailedTrajectorySet& failed, const PolicyParameters& params,
                                            const Featurizer& featurizer, const TaskIndex& tasks,
                                            const SelectionThresholds& thresholds, BranchBudget budget,
                                            std::uint64_t master_seed, int workers);

// ---- preference data ----

/// Serialized s_t: the query followed by the (action, payload) history.
std::string encode_state_context(std::span<const int> query, std::span<const HistoryEntry> history);

struct DecodedContext {
  std::vector<int> query;
  std::vector<HistoryEntry> history;
};
DecodedContext decode_state_context(const std::string& context);

struct PairProvenance {
  std::string task_id;
  std::string parent_trajectory_id;
  int step = 1;
  std::uint64_t branch_seed = 0;
  PairSourceMode mode = PairSourceMode::expert_pos_policy_neg;
  int round = 0;
  std::uint64_t parent_seed = 0;
  EndReason parent_end = EndReason::horizon;
  int sample_index = 0;
  Difficulty difficulty = Difficulty::L1;
};

struct PreferencePair {
  std::string state_context;
  int chosen = 0;
  int rejected = 0;
  PairProvenance provenance;
};

struct DatasetStats {
  std::array<int, 3> per_difficulty{};
  std::map<int, int> per_round;
  int verified_steps = 0;
  int steps_without_pairs = 0;
};

class PreferenceDataset {
 public:
  explicit PreferenceDataset(PairSourceMode mode = PairSourceMode::expert_pos_policy_neg) : mode_(mode) {}

  /// Adds the pair unless an identical (state, chosen, rejected) triple is
  /// already present. Returns whether it was added.
  bool add(PreferencePair pair);

  const std::vector<PreferencePair>& pairs() const noexcept { return pairs_; }
  PairSourceMode mode() const noexcept { return mode_; }
  const DatasetStats& stats() const noexcept { return stats_; }
  DatasetStats& stats() noexcept { return stats_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  void warn(std::string message) { warnings_.push_back(std::move(message)); }

 private:
  PairSourceMode mode_;
  std::vector<PreferencePair> pairs_;
  std::map<std::tuple<std::string, int, int>, std::size_t> seen_;
  DatasetStats stats_;
  std::vector<std::string> warnings_;
};

struct PairBuildOptions {
  PairSourceMode mode = PairSourceMode::expert_pos_policy_neg;
  int round = 0;
  /// 0 means unlimited.
  int max_pairs_per_step = 0;
};

PreferenceDataset build_preference_pairs(const std::vector<BranchedStep>& branched,
                                         const FailedTrajectorySet& failed, const TaskIndex& tasks,
                                         const PairBuildOptions& options);

/// Pairs straight from threshold candidates: every alternative above
/// gamma_high against the policy action, without verification.
PreferenceDataset build_unverified_pairs(const std::vector<CandidateCriticalStep>& candidates,
                                         const FailedTrajectorySet& failed, const TaskIndex& tasks,
                                         const SelectionThresholds& thresholds, const PairBuildOptions& options);

std::string pair_to_json_line(const PreferencePair& pair);
PreferencePair pair_from_json_line(const std::string& line);
void write_dataset(std::ostream& out, const PreferenceDataset& dataset);
PreferenceDataset read_dataset(std::istream& in);

// ---- one full round ----

struct RoundConfig {
  int trials_per_task = 1;
  ScanConfig scan;
  SelectionStrategy strategy = SelectionStrategy::prm_and_verification;
  PairBuildOptions pairs;
  int workers = 1;
};

struct RoundArtifacts {
  std::vector<Trajectory> rollouts;
  FailedTrajectorySet failed;
  std::vector<ScoredStep> scan;
  std::vector<CandidateCriticalStep> candidates;
  std::vector<BranchedStep> branched;
  PreferenceDataset dataset;
};

/// collect -> scan -> select -> branch -> build for the given round.
RoundArtifacts run_round(const PolicyParameters& params, const Featurizer& featurizer, const TaskIndex& tasks,
                         const RoundConfig& config, const ProcessRewardModel& prm, std::uint64_t master_seed,
                         int round);

/// Re-derives the parent and the chosen branch of a pair from its
/// provenance. Used to audit verification soundness.
struct ReplayAudit {
  int parent_outcome = -1;
  int branch_outcome = -1;
  bool parent_matches = false;
  bool chosen_matches = false;
};

ReplayAudit replay_pair(const PreferencePair& pair, const Trajectory& stored_parent, const PolicyParameters& params,
                        const Featurizer& featurizer, const TaskIndex& tasks);

}  // namespace cso
