#include "cso/prm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cso/error.hpp"

namespace cso {

void RubricWeights::validate() const {
  const double w[] = {correctness, relevance, progression, information_use, thought};
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::invalid_argument, "rubric weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail(ErrorCode::invalid_argument, "rubric weights must sum to 1 (got " + std::to_string(sum) + ")");
}

double combine(const DimensionScores& d, const RubricWeights& w) {
  return w.correctness * d.correctness + w.relevance * d.relevance + w.progression * d.progression +
         w.information_use * d.information_use + w.thought * d.thought;
}

DimensionScores rubric_dimensions(const TaskSpec& task, const WorldState& state, int action) {
  const auto vocab = task.vocabulary();
  require(vocab.valid_action(action), ErrorCode::invalid_argument, "action outside vocabulary");
  const int oracle = oracle_action(task, state);
  const StepEffect effect = classify_step(task, state, action);
  const bool is_answer = vocab.is_answer(action);
  const bool answer_phase = state.progress + (state.poisoned ? 1 : 0) > task.length();

  DimensionScores d;
  d.correctness = action == oracle ? 1.0 : 0.0;
  if (is_answer == vocab.is_answer(oracle)) {
    d.relevance = is_answer || vocab.tool_of(action) == vocab.tool_of(oracle) ? 1.0 : 0.5;
  }
  switch (effect) {
    case StepEffect::advance:
    case StepEffect::correct_answer: d.progression = 1.0; break;
    case StepEffect::no_op: d.progression = 0.7; break;
    case StepEffect::decoy:
    case StepEffect::wrong_answer: d.progression = 0.0; break;
  }
  if (is_answer) {
    d.information_use = answer_phase && vocab.value_of(action) == state.revealed_argument ? 1.0 : 0.0;
  } else {
    d.information_use = !answer_phase && vocab.argument_of(action) == state.revealed_argument ? 1.0 : 0.0;
  }
  const bool premature = is_answer && state.progress <= task.length();
  d.thought = effect == StepEffect::decoy || premature ? 0.0 : 1.0;
  return d;
}

void SelectionThresholds::validate() const {
  if (!(gamma_low >= 0.0 && gamma_low < gamma_high && gamma_high <= 1.0))
    fail(ErrorCode::invalid_argument, "thresholds must satisfy 0 <= gamma_low < gamma_high <= 1");
}

PrmScore rubric_score(const TaskSpec& task, const WorldState& state, int action, const RubricConfig& config,
                      RandomStream& rng) {
  config.weights.validate();
  require(config.noise_eta >= 0.0, ErrorCode::invalid_argument, "noise eta must be nonnegative");
  double value = combine(rubric_dimensions(task, state, action), config.weights);
  if (config.noise_eta > 0.0) {
    if (config.noise == NoiseModel::uniform) {
      value += config.noise_eta * (2.0 * rng.uniform() - 1.0);
    } else {
      double z = rng.normal();
      while (std::abs(z) > 2.0) z = rng.normal();
      value += config.noise_eta * z;
    }
  }
  return {std::clamp(value, 0.0, 1.0), ScoreSource::rubric, false};
}

std::string rubric_prompt(const RubricWeights& w) {
  std::ostringstream out;
  out << "Score the proposed agent action for the current task state on a scale from 0.0 to 1.0.\n"
      << "Rate each dimension in [0, 1] and report the weighted sum:\n"
      << "1. Correctness (" << w.correctness * 100 << "%): is this the right call with the right argument?\n"
      << "2. Relevance (" << w.relevance * 100 << "%): does the action address what the task needs now?\n"
      << "3. Progression (" << w.progression * 100 << "%): does it build on earlier steps and move the task forward?\n"
      << "4. Information use (" << w.information_use * 100
      << "%): does it use the values revealed by earlier observations?\n"
      << "5. Planning (" << w.thought * 100 << "%): does it avoid traps and premature conclusions?\n"
      << "Respond with JSON: {\"score\": <number>}.";
  return out.str();
}

std::string render_state(const TaskSpec& task, const WorldState& state, int window) {
  const auto vocab = task.vocabulary();
  std::ostringstream out;
  out << "task " << task.task_id << "; query tools [";
  for (int p = 0; p < task.length(); ++p) out << (p ? " " : "") << task.query[static_cast<std::size_t>(p)];
  out << "], first argument " << task.query.back() - task.tools << "; step " << state.step_index;
  const std::size_t n = state.history.size();
  const std::size_t from = window > 0 && n > static_cast<std::size_t>(window) ? n - window : 0;
  for (std::size_t i = from; i < n; ++i) {
    const auto& h = state.history[i];
    out << "\n" << (i + 1) << ": " << vocab.describe_action(h.action) << " -> ";
    if (vocab.is_reveal(h.payload)) {
      out << "argument " << vocab.revealed_argument(h.payload) << ", next tool " << vocab.hinted_tool(h.payload);
    } else if (vocab.is_final_reveal(h.payload)) {
      out << "value " << vocab.revealed_value(h.payload);
    } else if (h.payload == vocab.error_payload()) {
      out << "error";
    } else {
      out << "done";
    }
  }
  return out.str();
}

std::string render_action(const Vocabulary& vocab, int action) { return vocab.describe_action(action); }

ProcessRewardModel::ProcessRewardModel(PrmConfig config) : config_(std::move(config)) {
  config_.rubric.weights.validate();
  if (config_.mode == PrmConfig::Mode::remote)
    remote_ = std::make_shared<RemoteScorer>(config_.remote, config_.rubric.weights);
}

PrmScore ProcessRewardModel::score(const TaskSpec& task, const WorldState& state, int action,
                                   RandomStream& rng) const {
  if (config_.mode == PrmConfig::Mode::rubric) return rubric_score(task, state, action, config_.rubric, rng);
  return remote_->score(render_state(task, state, config_.render_window),
                        render_action(task.vocabulary(), action));
}

std::vector<CandidateCriticalStep> select_candidates(const Trajectory& trajectory,
                                                     const std::vector<PrmScore>& policy_scores,
                                                     const std::vector<std::vector<ScoredAlternative>>& alternatives,
                                                     const SelectionThresholds& thresholds) {
  thresholds.validate();
  require(trajectory.outcome == 0, ErrorCode::invalid_argument,
          "candidate selection requires a failed trajectory; '" + trajectory.id + "' succeeded");
  const auto n = trajectory.steps.size();
  require(policy_scores.size() == n && alternatives.size() == n, ErrorCode::invalid_argument,
          "score lists are not aligned with the steps of '" + trajectory.id + "'");
  std::vector<CandidateCriticalStep> out;
  for (std::size_t t = 0; t < n; ++t) {
    if (!(policy_scores[t].value < thresholds.gamma_low)) continue;
    double best = -1.0;
    for (const auto& alt : alternatives[t]) best = std::max(best, alt.score.value);
    if (!(best > thresholds.gamma_high)) continue;
    out.push_back({trajectory.id, static_cast<int>(t) + 1, trajectory.steps[t].action, policy_scores[t],
                   alternatives[t], trajectory.steps[t].state_digest});
  }
  return out;
}

}  // namespace cso
