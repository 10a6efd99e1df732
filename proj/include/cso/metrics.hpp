#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cso/pipeline.hpp"
#include "cso/policy.hpp"
#include "cso/prm.hpp"

namespace cso {

struct EvalReport {
  std::string method;
  int round = 0;
  int trials = 1;
  std::vector<std::uint64_t> seeds;
  /// Indexed by difficulty level - 1.
  std::array<int, 3> successes{};
  std::array<int, 3> counts{};
  /// Overall success rate per seed, in seed order.
  std::vector<double> per_seed;

  int total_successes() const noexcept { return successes[0] + successes[1] + successes[2]; }
  int total_count() const noexcept { return counts[0] + counts[1] + counts[2]; }
  double overall() const noexcept;
  double level_rate(Difficulty level) const noexcept;
  /// Standard error of the per-seed overall rates (0 with one seed).
  double standard_error() const noexcept;
};

/// Optional step-level best-of-N decoding during evaluation.
struct BonOptions {
  const ProcessRewardModel* prm = nullptr;
  int k = 5;
};

/// Success over trials x seeds x tasks, stratified by difficulty. Episode
/// (seed, task, trial) draws from derive(seed, "eval", task, trial).
EvalReport evaluate(const PolicyParameters& params, const Featurizer& featurizer, const std::vector<TaskSpec>& tasks,
                    int trials, const std::vector<std::uint64_t>& seeds, int workers = 1,
                    const std::optional<BonOptions>& bon = std::nullopt);

struct SupervisionStats {
  int pair_count = 0;
  /// Unique (trajectory, step) locations that received a pair.
  int supervised_steps = 0;
  int failed_step_total = 0;

  double step_fraction() const noexcept;
  double pair_fraction() const noexcept;
};

SupervisionStats supervision_stats(const PreferenceDataset& dataset, const FailedTrajectorySet& failed);

/// Fraction helper for externally supplied counts.
double supervision_fraction(int supervised, int total);

struct IdentificationQuality {
  double precision = 1.0;
  double recall = 1.0;
  int flagged = 0;
  int events = 0;
  int hits = 0;
};

using StepLocation = std::pair<std::string, int>;

/// Precision of `flagged` against `events`; an empty flag set has precision
/// 1 by convention and no events gives recall 1.
IdentificationQuality identification_quality(const std::set<StepLocation>& flagged,
                                             const std::set<StepLocation>& events);

/// Ground-truth critical events: steps of failed trajectories where the
/// chain was intact at a planted position and the policy took the distractor.
std::set<StepLocation> critical_events(const FailedTrajectorySet& failed, const TaskIndex& tasks);

IdentificationQuality identification_quality(const std::vector<CandidateCriticalStep>& candidates,
                                             const FailedTrajectorySet& failed, const TaskIndex& tasks);

enum class ErrorCategory { wrong_tool, wrong_argument, premature_answer, horizon_exhausted, other };
constexpr int kErrorCategories = 5;

const char* category_name(ErrorCategory category) noexcept;

/// Classifies a rejected action against the oracle at its state.
ErrorCategory categorize(const TaskSpec& task, const WorldState& state, int rejected, EndReason parent_end);

struct ErrorHistogram {
  std::array<int, kErrorCategories> counts{};
  int total() const noexcept;
  double fraction(ErrorCategory category) const noexcept;
};

ErrorHistogram categorize_errors(const PreferenceDataset& dataset, const TaskIndex& tasks);

// ---- CSV emission (stable column order) ----

void write_eval_csv_header(std::ostream& out);
void write_eval_rows(std::ostream& out, const EvalReport& report);

void write_supervision_header(std::ostream& out);
void write_supervision_row(std::ostream& out, const std::string& method, std::uint64_t seed, int round,
                           const SupervisionStats& stats);

void write_error_header(std::ostream& out);
void write_error_rows(std::ostream& out, const std::string& method, const ErrorHistogram& histogram);

void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, int round, const std::string& method, double success, double stderr_value);

std::string format_double(double value);

}  // namespace cso
