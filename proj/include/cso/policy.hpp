#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cso/rng.hpp"
#include "cso/world.hpp"

namespace cso {

struct FeatureConfig {
  int dimension = 64;
  /// Number of most recent actions hashed into the history buckets.
  int history_window = 2;
};

using FeatureVector = std::vector<double>;

/// Maps (query, history) to a fixed-length, unit-norm feature vector.
///
/// Layout: bias | query tool hint at the apparent recipe position | tool hint
/// carried by the last observation | revealed argument or value | no-reveal
/// flag | answer-phase flag | step index (clamped) | hashed recent actions.
/// The apparent position counts reveal payloads in the history, so features
/// never read hidden world state.
class Featurizer {
 public:
  Featurizer(const Vocabulary& vocab, FeatureConfig config);

  FeatureVector operator()(std::span<const int> query, std::span<const HistoryEntry> history) const;
  FeatureVector operator()(const TaskSpec& task, const WorldState& state) const {
    return (*this)(task.query, state.history);
  }

  int dimension() const noexcept { return config_.dimension; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  const FeatureConfig& config() const noexcept { return config_; }

 private:
  Vocabulary vocab_;
  FeatureConfig config_;
  int query_hint_offset_ = 0;
  int obs_hint_offset_ = 0;
  int revealed_offset_ = 0;
  int no_reveal_index_ = 0;
  int answer_phase_index_ = 0;
  int step_offset_ = 0;
  int hash_offset_ = 0;
  int hash_buckets_ = 0;
};

constexpr int kStepBuckets = 8;

struct PolicyParameters {
  int actions = 0;
  int features = 0;
  /// Row-major actions x features.
  std::vector<double> weights;
  std::uint64_t version = 0;

  static PolicyParameters zeros(int actions, int features);

  double& at(int action, int feature) { return weights[static_cast<std::size_t>(action) * features + feature]; }
  double at(int action, int feature) const {
    return weights[static_cast<std::size_t>(action) * features + feature];
  }
  bool operator==(const PolicyParameters&) const = default;
};

/// Frozen parameters plus where they came from.
class PolicySnapshot {
 public:
  PolicySnapshot(PolicyParameters params, int round, std::string producer)
      : params_(std::move(params)), round_(round), producer_(std::move(producer)) {}

  const PolicyParameters& params() const noexcept { return params_; }
  int round() const noexcept { return round_; }
  const std::string& producer() const noexcept { return producer_; }

 private:
  PolicyParameters params_;
  int round_;
  std::string producer_;
};

void check_finite(const PolicyParameters& params);

std::vector<double> logits(const PolicyParameters& params, const FeatureVector& features);
std::vector<double> log_probs(const PolicyParameters& params, const FeatureVector& features);
double log_prob(const PolicyParameters& params, const FeatureVector& features, int action);

/// Categorical draw by inverse CDF; consumes exactly one uniform.
int sample_action(const PolicyParameters& params, const FeatureVector& features, RandomStream& rng);

/// Oracle action with probability 1 - epsilon, otherwise a uniformly random
/// non-oracle action. Consumes exactly two draws.
int expert_action(const TaskSpec& task, const WorldState& state, double epsilon, RandomStream& rng);

/// grad += coeff * d log pi(action | features) / dW.
void add_log_prob_gradient(const PolicyParameters& params, const FeatureVector& features, int action,
                           double coeff, std::span<double> grad);
/// Same, reusing log-probabilities already computed for `features`.
void add_log_prob_gradient(const PolicyParameters& params, const FeatureVector& features,
                           std::span<const double> log_probs, int action, double coeff, std::span<double> grad);

// ---- rollouts ----

/// Something that picks an action given the task, the current world state
/// and its features.
enum class Actor { policy, expert };

struct RolloutSpec {
  Actor actor = Actor::policy;
  double expert_epsilon = 0.05;
};

/// Continues from `state` (whose history is already recorded in `steps`)
/// until termination, drawing from `rng`.
void continue_rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                      WorldState state, std::vector<StepRecord>& steps, RandomStream& rng,
                      const RolloutSpec& spec = {});

Trajectory rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                   std::uint64_t seed, const RolloutSpec& spec = {});

// ---- supervised fine-tuning ----

struct Demonstration {
  TaskSpec task;
  Trajectory trajectory;
};

/// Successful trajectories only.
class DemoDataset {
 public:
  void add(TaskSpec task, Trajectory trajectory);
  const std::vector<Demonstration>& items() const noexcept { return items_; }
  bool empty() const noexcept { return items_.empty(); }
  std::size_t size() const noexcept { return items_.size(); }

 private:
  std::vector<Demonstration> items_;
};

struct SftConfig {
  double step_size = 0.1;
  int epochs = 100;
  int workers = 1;
};

struct SftResult {
  PolicyParameters params;
  /// Loss before each epoch's update, plus the final loss.
  std::vector<double> loss_history;
};

/// Mean over demonstrations of the summed per-step negative log-likelihood.
double sft_loss(const PolicyParameters& params, const Featurizer& featurizer, const DemoDataset& demos);
std::vector<double> sft_gradient(const PolicyParameters& params, const Featurizer& featurizer,
                                 const DemoDataset& demos, int workers = 1);
SftResult sft_train(const PolicyParameters& params, const Featurizer& featurizer, const DemoDataset& demos,
                    const SftConfig& config);

// ---- persistence ----

void save_parameters(const std::filesystem::path& path, const PolicySnapshot& snapshot);
PolicySnapshot load_parameters(const std::filesystem::path& path);

}  // namespace cso
