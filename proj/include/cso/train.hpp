#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cso/pipeline.hpp"
#include "cso/policy.hpp"
#include "cso/prm.hpp"

namespace cso {

struct DpoConfig {
  double beta = 0.5;
  double step_size = 0.05;
  int epochs = 200;
  int workers = 1;

  void validate() const;
};

/// Numerically stable log(1 + e^x).
double softplus(double x) noexcept;

/// -log sigmoid(beta * margin).
double dpo_loss_from_margin(double beta, double margin) noexcept;

/// One log-ratio term of a preference margin: sign * (log pi(action|f) - ref_logp).
struct PreferenceTerm {
  FeatureVector features;
  int action = 0;
  double sign = 1.0;
  double ref_logp = 0.0;
};

/// A compiled preference example. Step pairs have two terms; trajectory
/// pairs carry one term per step of each trajectory.
struct DpoExample {
  std::vector<PreferenceTerm> terms;
};

double example_margin(const PolicyParameters& params, const DpoExample& example);

/// Compiles step pairs against a frozen reference.
std::vector<DpoExample> compile_pairs(const PolicyParameters& ref, const Featurizer& featurizer,
                                      const std::vector<PreferencePair>& pairs);

double dpo_pair_loss(const PolicyParameters& params, const PolicyParameters& ref, const Featurizer& featurizer,
                     const PreferencePair& pair, double beta);

/// Mean loss gradient over `batch`, flattened like PolicyParameters::weights.
std::vector<double> dpo_gradient(const PolicyParameters& params, const PolicyParameters& ref,
                                 const Featurizer& featurizer, const std::vector<PreferencePair>& batch, double beta,
                                 int workers = 1);

struct BatchEvaluation {
  double mean_loss = 0.0;
  double mean_margin = 0.0;
  std::vector<double> gradient;
};

BatchEvaluation evaluate_examples(const PolicyParameters& params, const std::vector<DpoExample>& examples,
                                  double beta, int workers, bool with_gradient);

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_margin = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  PolicyParameters params;
  /// One row per epoch (metrics before that epoch's update).
  std::vector<EpochMetrics> metrics;
};

TrainResult train_dpo_examples(const PolicyParameters& params, const std::vector<DpoExample>& examples,
                               const DpoConfig& config);

/// Full-batch gradient descent on the mean step-level DPO loss.
TrainResult train_dpo(const PolicyParameters& params, const PolicyParameters& ref, const Featurizer& featurizer,
                      const PreferenceDataset& dataset, const DpoConfig& config);

void write_epoch_metrics(std::ostream& out, const std::vector<EpochMetrics>& metrics);

// ---- baselines ----

enum class BaselineKind { eto, rft, step_dpo, ipr };

const char* baseline_name(BaselineKind kind) noexcept;
BaselineKind parse_baseline(std::string_view name);

/// A trajectory-level preference: an expert success against a policy
/// failure on the same task.
struct TrajectoryPair {
  std::string task_id;
  Trajectory chosen;
  Trajectory rejected;
};

std::vector<DpoExample> compile_trajectory_pairs(const PolicyParameters& ref, const Featurizer& featurizer,
                                                 const TaskIndex& tasks, const std::vector<TrajectoryPair>& pairs);

/// What a round has produced that the baselines draw on.
struct BaselineInputs {
  const TaskIndex* tasks = nullptr;
  const std::vector<Trajectory>* policy_rollouts = nullptr;
  const FailedTrajectorySet* failed = nullptr;
  const std::vector<Trajectory>* expert_rollouts = nullptr;
  /// PRM-scored scan of the failed set (Step-DPO).
  const std::vector<ScoredStep>* scan = nullptr;
  int round = 0;
};

struct BaselineDataset {
  BaselineKind kind = BaselineKind::step_dpo;
  PreferenceDataset steps;
  std::vector<TrajectoryPair> trajectories;
  DemoDataset demos;

  std::size_t size() const noexcept;
};

BaselineDataset build_baseline_dataset(BaselineKind kind, const BaselineInputs& inputs);

// ---- iteration ----

/// The post-training recipe applied each round.
struct MethodSpec {
  enum class Kind { cso, baseline } kind = Kind::cso;
  std::string label = "cso";
  RoundConfig round;
  BaselineKind baseline = BaselineKind::step_dpo;
};

struct RoundRecord {
  int round = 0;
  PreferenceDataset dataset;
  std::size_t examples = 0;
  int failed_trajectories = 0;
  int failed_steps = 0;
  std::vector<EpochMetrics> metrics;
  bool carried_forward = false;
  std::vector<std::string> warnings;
  /// Intermediate products of the round. Baseline rounds fill rollouts,
  /// failed and (Step-DPO) scan only.
  RoundArtifacts artifacts;
};

struct IterationState {
  int round = 0;
  std::vector<PolicySnapshot> history;
  /// refs[i - 1] is the reference used to train round i.
  std::vector<PolicyParameters> refs;
  std::vector<RoundRecord> rounds;
  std::vector<double> eval_success;
};

struct IterationConfig {
  int rounds = 2;
  DpoConfig dpo;
  /// Expert rollouts per task for the baselines that need them.
  int expert_trials = 1;
  double expert_epsilon = 0.05;
};

/// Called after each round (and for the initial snapshot) with the params
/// and round index; returns the success rate stored in eval_success.
using RoundEvaluator = std::function<double(const PolicyParameters&, int round)>;

IterationState iterate(const PolicyParameters& initial, const Featurizer& featurizer, const TaskIndex& tasks,
                       const MethodSpec& method, const IterationConfig& config, const ProcessRewardModel& prm,
                       std::uint64_t master_seed, const RoundEvaluator& evaluate = {});

IterationState iterate_cso(const PolicyParameters& initial, const Featurizer& featurizer, const TaskIndex& tasks,
                           const RoundConfig& round, const IterationConfig& config, const ProcessRewardModel& prm,
                           std::uint64_t master_seed, const RoundEvaluator& evaluate = {});

// ---- step-level best-of-N ----

/// Samples k actions from the policy using `rng`, scores each with the PRM
/// on its own derived stream, and returns the highest-scoring one (lowest
/// sample index on ties).
int bon_select(const PolicyParameters& params, const Featurizer& featurizer, const ProcessRewardModel& prm,
               const TaskSpec& task, const WorldState& state, int k, RandomStream& rng);

}  // namespace cso
