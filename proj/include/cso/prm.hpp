#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include "cso/rng.hpp"
#include "cso/world.hpp"

namespace cso {

enum class ScoreSource { rubric, remote };

struct PrmScore {
  double value = 0.0;
  ScoreSource source = ScoreSource::rubric;
  /// Set when a remote score fell outside [0, 1] and was clamped.
  bool clamped = false;
};

/// Dimension weights of the scoring rubric.
struct RubricWeights {
  double correctness = 0.35;
  double relevance = 0.25;
  double progression = 0.20;
  double information_use = 0.15;
  double thought = 0.05;

  void validate() const;
};

struct DimensionScores {
  double correctness = 0.0;
  double relevance = 0.0;
  double progression = 0.0;
  double information_use = 0.0;
  double thought = 0.0;
};

/// Weighted sum of dimension scores.
double combine(const DimensionScores& dims, const RubricWeights& weights);

/// Ground-truth rubric dimensions for taking `action` in `state`:
///  correctness     action equals the oracle action
///  relevance       same action kind as the oracle (1), or an invocation of
///                  a different tool (0.5)
///  progression     advances the recipe or answers correctly (1), harmless
///                  no-op (0.7), poisons the chain or ends the task wrongly (0)
///  information_use uses the currently revealed argument or value
///  thought         not a distractor and not a premature answer
DimensionScores rubric_dimensions(const TaskSpec& task, const WorldState& state, int action);

enum class NoiseModel { uniform, gaussian };

struct SelectionThresholds {
  double gamma_low = 0.45;
  double gamma_high = 0.65;

  void validate() const;
};

struct RubricConfig {
  RubricWeights weights;
  double noise_eta = 0.0;
  NoiseModel noise = NoiseModel::uniform;
};

/// Weighted rubric score plus zero-mean noise of scale eta (uniform on
/// [-eta, eta], or a normal with sd eta truncated at two sd), clamped to
/// [0, 1]. With eta = 0 no random draws are consumed.
PrmScore rubric_score(const TaskSpec& task, const WorldState& state, int action, const RubricConfig& config,
                      RandomStream& rng);

// ---- remote scorer ----

struct RemoteConfig {
  /// e.g. "http://127.0.0.1:8080/score"
  std::string endpoint;
  std::chrono::milliseconds timeout{5000};
  int retry_budget = 3;
  std::chrono::milliseconds backoff_base{50};
  int max_inflight = 8;
};

/// Instruction text shipped with every remote request.
std::string rubric_prompt(const RubricWeights& weights);

/// Human-readable renderings used as the remote payload.
std::string render_state(const TaskSpec& task, const WorldState& state, int window);
std::string render_action(const Vocabulary& vocab, int action);

/// POSTs {schema, state, action, rubric_prompt} and reads {score}. Network
/// failures and 5xx responses are retried with exponential backoff; a
/// timeout on the final attempt raises ErrorCode::timeout.
class RemoteScorer {
 public:
  RemoteScorer(RemoteConfig config, RubricWeights weights);

  PrmScore score(const std::string& state_rendering, const std::string& action_rendering);

  const RemoteConfig& config() const noexcept { return config_; }
  /// Number of scores clamped into [0, 1] so far.
  int clamp_warnings() const;

 private:
  RemoteConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::string prompt_;
  std::counting_semaphore<1024> inflight_;
  mutable std::mutex mutex_;
  int clamp_warnings_ = 0;
};

// ---- scorer used by the pipeline ----

struct PrmConfig {
  enum class Mode { rubric, remote } mode = Mode::rubric;
  RubricConfig rubric;
  RemoteConfig remote;
  /// Number of most recent history entries rendered for the remote scorer;
  /// 0 renders the full history.
  int render_window = 0;
};

class ProcessRewardModel {
 public:
  explicit ProcessRewardModel(PrmConfig config);

  PrmScore score(const TaskSpec& task, const WorldState& state, int action, RandomStream& rng) const;
  const PrmConfig& config() const noexcept { return config_; }

 private:
  PrmConfig config_;
  std::shared_ptr<RemoteScorer> remote_;
};

// ---- candidate selection ----

struct ScoredAlternative {
  int action = 0;
  PrmScore score;
  /// 1-based sample index j.
  int sample_index = 1;
};

struct CandidateCriticalStep {
  std::string trajectory_id;
  /// 1-based step index t.
  int step_index = 1;
  int policy_action = 0;
  PrmScore policy_score;
  std::vector<ScoredAlternative> alternatives;
  std::uint64_t state_digest = 0;
};

/// Steps t with policy score < gamma_low and max alternative score >
/// gamma_high, ascending by t. The trajectory must have failed.
std::vector<CandidateCriticalStep> select_candidates(const Trajectory& trajectory,
                                                     const std::vector<PrmScore>& policy_scores,
                                                     const std::vector<std::vector<ScoredAlternative>>& alternatives,
                                                     const SelectionThresholds& thresholds);

}  // namespace cso
