#include "cso/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "cso/error.hpp"
#include "cso/parallel.hpp"
#include "cso/train.hpp"

namespace cso {

double EvalReport::overall() const noexcept {
  const int n = total_count();
  return n == 0 ? 0.0 : static_cast<double>(total_successes()) / n;
}

double EvalReport::level_rate(Difficulty level) const noexcept {
  const int i = static_cast<int>(level) - 1;
  return counts[i] == 0 ? 0.0 : static_cast<double>(successes[i]) / counts[i];
}

double EvalReport::standard_error() const noexcept {
  const auto n = per_seed.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : per_seed) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : per_seed) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

namespace {

Trajectory bon_rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                       std::uint64_t seed, const BonOptions& bon) {
  Trajectory t;
  t.task_id = task.task_id;
  RandomStream rng(seed);
  WorldState state = initial_state(task);
  while (!state.terminal) {
    const int action = bon_select(params, featurizer, *bon.prm, task, state, bon.k, rng);
    const auto digest = state_digest(state);
    auto next = transition(task, state, action);
    t.steps.push_back({digest, action, next.observation});
    state = std::move(next.state);
  }
  t.rng_trace = {seed, rng.draws()};
  t.outcome = verify_outcome(task, t);
  return t;
}

}  // namespace

EvalReport evaluate(const PolicyParameters& params, const Featurizer& featurizer, const std::vector<TaskSpec>& tasks,
                    int trials, const std::vector<std::uint64_t>& seeds, int workers,
                    const std::optional<BonOptions>& bon) {
  require(!tasks.empty(), ErrorCode::invalid_argument, "evaluation needs a nonempty task list");
  require(trials >= 1, ErrorCode::invalid_argument, "evaluation trials must be at least 1");
  require(!seeds.empty(), ErrorCode::invalid_argument, "evaluation needs at least one seed");
  if (bon) require(bon->prm != nullptr, ErrorCode::invalid_argument, "best-of-N evaluation needs a PRM");
  check_finite(params);
  EvalReport report;
  report.trials = trials;
  report.seeds = seeds;
  const std::size_t per_seed = tasks.size() * static_cast<std::size_t>(trials);
  std::vector<int> outcome(per_seed * seeds.size(), 0);
  parallel_for(outcome.size(), workers, [&](std::size_t i) {
    const auto seed = seeds[i / per_seed];
    const std::size_t r = i % per_seed;
    const auto& task = tasks[r / static_cast<std::size_t>(trials)];
    const int trial = static_cast<int>(r % static_cast<std::size_t>(trials));
    const auto episode_seed = derive_seed(seed, {"eval", task.task_id, trial});
    outcome[i] = bon ? bon_rollout(params, featurizer, task, episode_seed, *bon).outcome
                     : rollout(params, featurizer, task, episode_seed).outcome;
  });
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    int wins = 0;
    for (std::size_t r = 0; r < per_seed; ++r) {
      const auto& task = tasks[r / static_cast<std::size_t>(trials)];
      const int level = static_cast<int>(task.difficulty) - 1;
      const int y = outcome[s * per_seed + r];
      report.successes[level] += y;
      report.counts[level] += 1;
      wins += y;
    }
    report.per_seed.push_back(static_cast<double>(wins) / static_cast<double>(per_seed));
  }
  return report;
}

double SupervisionStats::step_fraction() const noexcept {
  return failed_step_total == 0 ? 0.0 : static_cast<double>(supervised_steps) / failed_step_total;
}

double SupervisionStats::pair_fraction() const noexcept {
  return failed_step_total == 0 ? 0.0 : static_cast<double>(pair_count) / failed_step_total;
}

double supervision_fraction(int supervised, int total) {
  require(total > 0 && supervised >= 0, ErrorCode::invalid_argument, "supervision fraction needs total > 0");
  return static_cast<double>(supervised) / total;
}

SupervisionStats supervision_stats(const PreferenceDataset& dataset, const FailedTrajectorySet& failed) {
  SupervisionStats stats;
  stats.failed_step_total = failed.total_steps;
  std::set<StepLocation> locations;
  for (const auto& pair : dataset.pairs()) {
    if (pair.provenance.round != failed.round_index)
      fail(ErrorCode::invalid_argument, "preference pair from round " + std::to_string(pair.provenance.round) +
                                            " does not match failed set round " + std::to_string(failed.round_index));
    locations.emplace(pair.provenance.parent_trajectory_id, pair.provenance.step);
  }
  stats.pair_count = static_cast<int>(dataset.size());
  stats.supervised_steps = static_cast<int>(locations.size());
  return stats;
}

IdentificationQuality identification_quality(const std::set<StepLocation>& flagged,
                                             const std::set<StepLocation>& events) {
  IdentificationQuality q;
  q.flagged = static_cast<int>(flagged.size());
  q.events = static_cast<int>(events.size());
  for (const auto& loc : flagged) q.hits += static_cast<int>(events.count(loc));
  q.precision = flagged.empty() ? 1.0 : static_cast<double>(q.hits) / q.flagged;
  q.recall = events.empty() ? 1.0 : static_cast<double>(q.hits) / q.events;
  if (flagged.empty() && !events.empty()) q.recall = 0.0;
  return q;
}

std::set<StepLocation> critical_events(const FailedTrajectorySet& failed, const TaskIndex& tasks) {
  std::set<StepLocation> events;
  for (const auto& traj : failed.trajectories) {
    const auto& task = tasks.at(traj.task_id);
    WorldState state = initial_state(task);
    for (int t = 1; t <= traj.length(); ++t) {
      const int action = traj.steps[static_cast<std::size_t>(t - 1)].action;
      const auto distractor = distractor_action(task, state);
      if (distractor && *distractor == action) events.emplace(traj.id, t);
      state = transition(task, state, action).state;
    }
  }
  return events;
}

IdentificationQuality identification_quality(const std::vector<CandidateCriticalStep>& candidates,
                                             const FailedTrajectorySet& failed, const TaskIndex& tasks) {
  std::set<StepLocation> flagged;
  for (const auto& c : candidates) flagged.emplace(c.trajectory_id, c.step_index);
  return identification_quality(flagged, critical_events(failed, tasks));
}

const char* category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::wrong_tool: return "wrong_tool";
    case ErrorCategory::wrong_argument: return "wrong_argument";
    case ErrorCategory::premature_answer: return "premature_answer";
    case ErrorCategory::horizon_exhausted: return "horizon_exhausted";
    case ErrorCategory::other: return "other";
  }
  return "?";
}

ErrorCategory categorize(const TaskSpec& task, const WorldState& state, int rejected, EndReason parent_end) {
  const auto vocab = task.vocabulary();
  require(vocab.valid_action(rejected), ErrorCode::invalid_argument, "rejected action outside vocabulary");
  const int oracle = oracle_action(task, state);
  if (!vocab.is_answer(rejected) && !vocab.is_answer(oracle)) {
    if (vocab.tool_of(rejected) != vocab.tool_of(oracle)) return ErrorCategory::wrong_tool;
    if (vocab.argument_of(rejected) != vocab.argument_of(oracle)) return ErrorCategory::wrong_argument;
  }
  if (vocab.is_answer(rejected) && state.progress <= task.length()) return ErrorCategory::premature_answer;
  if (parent_end == EndReason::horizon) return ErrorCategory::horizon_exhausted;
  return ErrorCategory::other;
}

int ErrorHistogram::total() const noexcept {
  int n = 0;
  for (int c : counts) n += c;
  return n;
}

double ErrorHistogram::fraction(ErrorCategory category) const noexcept {
  const int n = total();
  return n == 0 ? 0.0 : static_cast<double>(counts[static_cast<int>(category)]) / n;
}

ErrorHistogram categorize_errors(const PreferenceDataset& dataset, const TaskIndex& tasks) {
  ErrorHistogram h;
  for (const auto& pair : dataset.pairs()) {
    const auto& task = tasks.at(pair.provenance.task_id);
    const auto context = decode_state_context(pair.state_context);
    require(context.query == task.query, ErrorCode::replay_divergence,
            "pair state context does not match task '" + task.task_id + "'");
    WorldState state = initial_state(task);
    for (const auto& entry : context.history) {
      if (state.terminal) fail(ErrorCode::replay_divergence, "pair history continues past termination");
      auto next = transition(task, state, entry.action);
      if (next.observation.payload != entry.payload)
        fail(ErrorCode::replay_divergence, "pair history for task '" + task.task_id + "' does not replay");
      state = std::move(next.state);
    }
    h.counts[static_cast<int>(categorize(task, state, pair.rejected, pair.provenance.parent_end))] += 1;
  }
  return h;
}

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

void write_eval_csv_header(std::ostream& out) { out << "method,round,level,successes,count,rate,stderr\n"; }

void write_eval_rows(std::ostream& out, const EvalReport& r) {
  for (int i = 0; i < 3; ++i) {
    const auto level = static_cast<Difficulty>(i + 1);
    out << r.method << ',' << r.round << ',' << difficulty_name(level) << ',' << r.successes[i] << ','
        << r.counts[i] << ',' << format_double(r.level_rate(level)) << ",\n";
  }
  out << r.method << ',' << r.round << ",all," << r.total_successes() << ',' << r.total_count() << ','
      << format_double(r.overall()) << ',' << format_double(r.standard_error()) << '\n';
}

void write_supervision_header(std::ostream& out) {
  out << "method,seed,round,pair_count,supervised_steps,failed_step_total,step_fraction,pair_fraction\n";
}

void write_supervision_row(std::ostream& out, const std::string& method, std::uint64_t seed, int round,
                           const SupervisionStats& s) {
  out << method << ',' << seed << ',' << round << ',' << s.pair_count << ',' << s.supervised_steps << ',' << s.failed_step_total
      << ',' << format_double(s.step_fraction()) << ',' << format_double(s.pair_fraction()) << '\n';
}

void write_error_header(std::ostream& out) { out << "method,category,count,fraction\n"; }

void write_error_rows(std::ostream& out, const std::string& method, const ErrorHistogram& h) {
  for (int c = 0; c < kErrorCategories; ++c) {
    const auto cat = static_cast<ErrorCategory>(c);
    out << method << ',' << category_name(cat) << ',' << h.counts[c] << ',' << format_double(h.fraction(cat)) << '\n';
  }
}

void write_curve_header(std::ostream& out) { out << "round,method,success,stderr\n"; }

void write_curve_row(std::ostream& out, int round, const std::string& method, double success, double stderr_value) {
  out << round << ',' << method << ',' << format_double(success) << ',' << format_double(stderr_value) << '\n';
}

}  // namespace cso
