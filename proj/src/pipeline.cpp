#include "cso/pipeline.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cso/error.hpp"
#include "cso/parallel.hpp"

namespace cso {

namespace {

constexpr int kPairSchema = 1;

std::unordered_map<std::string, const Trajectory*> index_trajectories(const FailedTrajectorySet& failed) {
  std::unordered_map<std::string, const Trajectory*> out;
  for (const auto& t : failed.trajectories) out.emplace(t.id, &t);
  return out;
}

std::vector<HistoryEntry> history_prefix(const Trajectory& t, int step) {
  std::vector<HistoryEntry> out;
  for (int i = 0; i + 1 < step; ++i)
    out.push_back({t.steps[static_cast<std::size_t>(i)].action, t.steps[static_cast<std::size_t>(i)].observation.payload});
  return out;
}

}  // namespace

const char* mode_name(PairSourceMode mode) noexcept {
  switch (mode) {
    case PairSourceMode::expert_pos_policy_neg: return "expert_pos_policy_neg";
    case PairSourceMode::expert_pos_expert_neg: return "expert_pos_expert_neg";
    case PairSourceMode::policy_pos_policy_neg: return "policy_pos_policy_neg";
  }
  return "?";
}

PairSourceMode parse_mode(std::string_view name) {
  if (name == "expert_pos_policy_neg") return PairSourceMode::expert_pos_policy_neg;
  if (name == "expert_pos_expert_neg") return PairSourceMode::expert_pos_expert_neg;
  if (name == "policy_pos_policy_neg") return PairSourceMode::policy_pos_policy_neg;
  fail(ErrorCode::invalid_argument, "unknown pair source mode '" + std::string(name) + "'");
}

const char* strategy_name(SelectionStrategy strategy) noexcept {
  switch (strategy) {
    case SelectionStrategy::prm_and_verification: return "prm_and_verification";
    case SelectionStrategy::verification_only: return "verification_only";
    case SelectionStrategy::prm_only: return "prm_only";
  }
  return "?";
}

SelectionStrategy parse_strategy(std::string_view name) {
  if (name == "prm_and_verification") return SelectionStrategy::prm_and_verification;
  if (name == "verification_only") return SelectionStrategy::verification_only;
  if (name == "prm_only") return SelectionStrategy::prm_only;
  fail(ErrorCode::invalid_argument, "unknown selection strategy '" + std::string(name) + "'");
}

TaskIndex::TaskIndex(std::vector<TaskSpec> tasks) : tasks_(std::move(tasks)) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const bool inserted = by_id_.emplace(tasks_[i].task_id, i).second;
    require(inserted, ErrorCode::invalid_argument, "duplicate task id '" + tasks_[i].task_id + "'");
  }
}

const TaskSpec& TaskIndex::at(const std::string& task_id) const {
  const auto it = by_id_.find(task_id);
  if (it == by_id_.end()) fail(ErrorCode::invalid_argument, "unknown task id '" + task_id + "'");
  return tasks_[it->second];
}

void FailedTrajectorySet::add(Trajectory trajectory) {
  require(trajectory.outcome == 0, ErrorCode::invalid_argument,
          "failed set only holds y = 0 trajectories; '" + trajectory.id + "' succeeded");
  total_steps += trajectory.length();
  trajectories.push_back(std::move(trajectory));
}

std::string trajectory_id(const std::string& task_id, int round, int trial) {
  return task_id + "/r" + std::to_string(round) + "/k" + std::to_string(trial);
}

std::vector<Trajectory> collect_rollouts(const PolicyParameters& params, const Featurizer& featurizer,
                                         const std::vector<TaskSpec>& tasks, int trials,
                                         std::uint64_t master_seed, int round, int workers,
                                         const RolloutSpec& spec) {
  require(trials >= 1, ErrorCode::invalid_argument, "trials_per_task must be at least 1");
  check_finite(params);
  const char* purpose = spec.actor == Actor::expert ? "expert-rollout" : "rollout";
  std::vector<Trajectory> out(tasks.size() * static_cast<std::size_t>(trials));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const auto& task = tasks[i / static_cast<std::size_t>(trials)];
    const int trial = static_cast<int>(i % static_cast<std::size_t>(trials));
    const auto seed = derive_seed(master_seed, {purpose, round, task.task_id, trial});
    auto t = rollout(params, featurizer, task, seed, spec);
    t.id = trajectory_id(task.task_id, round, trial);
    if (spec.actor == Actor::expert) t.id += "/expert";
    t.round = round;
    out[i] = std::move(t);
  });
  return out;
}

FailedTrajectorySet failed_subset(const std::vector<Trajectory>& rollouts, int round) {
  FailedTrajectorySet failed;
  failed.round_index = round;
  for (const auto& t : rollouts)
    if (t.outcome == 0) failed.add(t);
  return failed;
}

FailedTrajectorySet collect_failed(const PolicyParameters& params, const Featurizer& featurizer,
                                   const std::vector<TaskSpec>& tasks, int trials, std::uint64_t master_seed,
                                   int round, int workers) {
  return failed_subset(collect_rollouts(params, featurizer, tasks, trials, master_seed, round, workers), round);
}

WorldState replay_prefix(const TaskSpec& task, const Trajectory& parent, int t) {
  require(t >= 1 && t <= parent.length(), ErrorCode::invalid_argument,
          "step " + std::to_string(t) + " outside trajectory '" + parent.id + "'");
  require(parent.task_id == task.task_id, ErrorCode::invalid_argument,
          "trajectory '" + parent.id + "' does not belong to task '" + task.task_id + "'");
  WorldState state = initial_state(task);
  for (int i = 0; i < t; ++i) {
    const auto& rec = parent.steps[static_cast<std::size_t>(i)];
    if (state_digest(state) != rec.state_digest)
      fail(ErrorCode::replay_divergence,
           "replay of '" + parent.id + "' diverged at step " + std::to_string(i + 1) + " (state digest)");
    if (i + 1 == t) break;
    auto next = transition(task, state, rec.action);
    if (next.observation != rec.observation)
      fail(ErrorCode::replay_divergence,
           "replay of '" + parent.id + "' diverged at step " + std::to_string(i + 1) + " (observation)");
    state = std::move(next.state);
  }
  return state;
}

CandidateCriticalStep ScoredStep::as_candidate() const {
  return {trajectory_id, step_index, policy_action, policy_score, alternatives, state_digest};
}

std::vector<ScoredStep> scan_steps(const FailedTrajectorySet& failed, const PolicyParameters& params,
                                   const Featurizer& featurizer, const TaskIndex& tasks, const ScanConfig& config,
                                   const ProcessRewardModel& prm, std::uint64_t master_seed, int workers) {
  require(config.k >= 1, ErrorCode::invalid_argument, "branch count k must be at least 1");
  config.thresholds.validate();
  const char* proposer = config.proposer == Actor::expert ? "expert" : "policy";
  std::vector<std::vector<ScoredStep>> per_trajectory(failed.trajectories.size());
  parallel_for(failed.trajectories.size(), workers, [&](std::size_t ti) {
    const auto& parent = failed.trajectories[ti];
    const auto& task = tasks.at(parent.task_id);
    auto& out = per_trajectory[ti];
    WorldState state = initial_state(task);
    for (int t = 1; t <= parent.length(); ++t) {
      const auto& rec = parent.steps[static_cast<std::size_t>(t - 1)];
      if (state_digest(state) != rec.state_digest)
        fail(ErrorCode::replay_divergence,
             "replay of '" + parent.id + "' diverged at step " + std::to_string(t));
      ScoredStep step;
      step.trajectory_index = ti;
      step.trajectory_id = parent.id;
      step.task_id = parent.task_id;
      step.step_index = t;
      step.policy_action = rec.action;
      step.state_digest = rec.state_digest;
      if (config.score) {
        RandomStream rng(derive_seed(master_seed, {"prm", parent.id, t, 0}));
        step.policy_score = prm.score(task, state, rec.action, rng);
      }
      const auto features = config.proposer == Actor::policy ? featurizer(task, state) : FeatureVector{};
      for (int j = 1; j <= config.k; ++j) {
        RandomStream propose(derive_seed(master_seed, {"propose", proposer, parent.id, t, j}));
        ScoredAlternative alt;
        alt.sample_index = j;
        alt.action = config.proposer == Actor::expert
                         ? expert_action(task, state, config.expert_epsilon, propose)
                         : sample_action(params, features, propose);
        if (config.score) {
          RandomStream rng(derive_seed(master_seed, {"prm", parent.id, t, j}));
          alt.score = prm.score(task, state, alt.action, rng);
        }
        step.alternatives.push_back(alt);
      }
      out.push_back(std::move(step));
      state = transition(task, state, rec.action).state;
    }
  });
  std::vector<ScoredStep> all;
  for (auto& v : per_trajectory)
    for (auto& s : v) all.push_back(std::move(s));
  return all;
}

std::vector<CandidateCriticalStep> select_from_scan(const FailedTrajectorySet& failed,
                                                    const std::vector<ScoredStep>& scan,
                                                    const SelectionThresholds& thresholds) {
  std::vector<CandidateCriticalStep> out;
  std::size_t pos = 0;
  for (std::size_t ti = 0; ti < failed.trajectories.size(); ++ti) {
    const auto& traj = failed.trajectories[ti];
    std::vector<PrmScore> policy_scores;
    std::vector<std::vector<ScoredAlternative>> alternatives;
    while (pos < scan.size() && scan[pos].trajectory_index == ti) {
      policy_scores.push_back(scan[pos].policy_score);
      alternatives.push_back(scan[pos].alternatives);
      ++pos;
    }
    auto selected = select_candidates(traj, policy_scores, alternatives, thresholds);
    out.insert(out.end(), std::make_move_iterator(selected.begin()), std::make_move_iterator(selected.end()));
  }
  return out;
}

std::vector<CandidateCriticalStep> scan_candidates(const FailedTrajectorySet& failed, const PolicyParameters& params,
                                                   const Featurizer& featurizer, const TaskIndex& tasks,
                                                   const ScanConfig& config, const ProcessRewardModel& prm,
                                                   std::uint64_t master_seed, int workers) {
  const auto scan = scan_steps(failed, params, featurizer, tasks, config, prm, master_seed, workers);
  return select_from_scan(failed, scan, config.thresholds);
}

std::uint64_t branch_seed(std::uint64_t master_seed, const std::string& parent_id, int t, int sample_index) {
  return derive_seed(master_seed, {"branch", parent_id, t, sample_index});
}

BranchResult branch_rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                            const Trajectory& parent, int t, const ScoredAlternative& alternative,
                            std::uint64_t seed) {
  const WorldState state = replay_prefix(task, parent, t);
  BranchResult result;
  result.parent_trajectory_id = parent.id;
  result.step_index = t;
  result.alternative = alternative;
  result.rng_seed = seed;

  auto& branch = result.branched_trajectory;
  branch.id = parent.id + "/b" + std::to_string(t) + "." + std::to_string(alternative.sample_index);
  branch.task_id = parent.task_id;
  branch.round = parent.round;
  branch.steps.assign(parent.steps.begin(), parent.steps.begin() + (t - 1));

  auto next = transition(task, state, alternative.action);
  branch.steps.push_back({state_digest(state), alternative.action, next.observation});
  RandomStream rng(seed);
  continue_rollout(params, featurizer, task, std::move(next.state), branch.steps, rng);
  branch.rng_trace = {seed, rng.draws()};
  branch.outcome = verify_outcome(task, branch);
  const auto vocab = task.vocabulary();
  branch.end = vocab.is_answer(branch.steps.back().action) ? EndReason::answer : EndReason::horizon;
  result.outcome = branch.outcome;
  return result;
}

std::vector<VerifiedCriticalStep> verified_steps(const std::vector<BranchedStep>& branched) {
  std::vector<VerifiedCriticalStep> out;
  for (const auto& step : branched) {
    VerifiedCriticalStep v{step.candidate, {}};
    for (const auto& b : step.branches)
      if (b.outcome == 1) v.successes.push_back(b);
    if (!v.successes.empty()) out.push_back(std::move(v));
  }
  return out;
}

std::vector<BranchedStep> verify_candidates(const std::vector<CandidateCriticalStep>& candidates,
                                            const FailedTrajectorySet& failed, const PolicyParameters& params,
                                            const Featurizer& featurizer, const TaskIndex& tasks,
                                            const SelectionThresholds& thresholds, BranchBudget budget,
                                            std::uint64_t master_seed, int workers) {
  const auto by_id = index_trajectories(failed);
  std::vector<BranchedStep> out(candidates.size());
  parallel_for(candidates.size(), workers, [&](std::size_t i) {
    const auto& c = candidates[i];
    const auto it = by_id.find(c.trajectory_id);
    if (it == by_id.end()) fail(ErrorCode::invalid_argument, "candidate from unknown trajectory '" + c.trajectory_id + "'");
    const Trajectory& parent = *it->second;
    const auto& task = tasks.at(parent.task_id);
    BranchedStep step{c, parent.task_id, {}};
    std::vector<int> tried;
    for (const auto& alt : c.alternatives) {
      if (budget == BranchBudget::above_gamma_high && !(alt.score.value > thresholds.gamma_high)) continue;
      // A repeated action is verified once, by its lowest sample index.
      if (std::find(tried.begin(), tried.end(), alt.action) != tried.end()) continue;
      tried.push_back(alt.action);
      step.branches.push_back(branch_rollout(params, featurizer, task, parent, c.step_index, alt,
                                             branch_seed(master_seed, parent.id, c.step_index, alt.sample_index)));
    }
    out[i] = std::move(step);
  });
  return out;
}

std::string encode_state_context(std::span<const int> query, std::span<const HistoryEntry> history) {
  std::ostringstream out;
  out << "q=";
  for (std::size_t i = 0; i < query.size(); ++i) out << (i ? "," : "") << query[i];
  out << "|h=";
  for (std::size_t i = 0; i < history.size(); ++i)
    out << (i ? "," : "") << history[i].action << ':' << history[i].payload;
  return out.str();
}

DecodedContext decode_state_context(const std::string& context) {
  DecodedContext out;
  const auto bar = context.find("|h=");
  if (context.rfind("q=", 0) != 0 || bar == std::string::npos)
    fail(ErrorCode::invalid_argument, "undecodable state context '" + context + "'");
  try {
    std::stringstream q(context.substr(2, bar - 2));
    std::string item;
    while (std::getline(q, item, ','))
      if (!item.empty()) out.query.push_back(std::stoi(item));
    std::stringstream h(context.substr(bar + 3));
    while (std::getline(h, item, ',')) {
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) fail(ErrorCode::invalid_argument, "undecodable history entry '" + item + "'");
      out.history.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    }
  } catch (const std::logic_error&) {
    fail(ErrorCode::invalid_argument, "undecodable state context '" + context + "'");
  }
  if (out.query.empty()) fail(ErrorCode::invalid_argument, "state context without a query");
  return out;
}

bool PreferenceDataset::add(PreferencePair pair) {
  require(pair.chosen != pair.rejected, ErrorCode::invalid_argument, "preference pair with chosen == rejected");
  auto key = std::make_tuple(pair.state_context, pair.chosen, pair.rejected);
  if (seen_.count(key)) return false;
  seen_.emplace(std::move(key), pairs_.size());
  stats_.per_difficulty[static_cast<int>(pair.provenance.difficulty) - 1] += 1;
  stats_.per_round[pair.provenance.round] += 1;
  pairs_.push_back(std::move(pair));
  return true;
}

namespace {

PreferencePair make_pair(const TaskSpec& task, const Trajectory& parent, int step, int chosen, int rejected,
                         std::uint64_t branch_seed, int sample_index, const PairBuildOptions& options) {
  PreferencePair pair;
  const auto history = history_prefix(parent, step);
  pair.state_context = encode_state_context(task.query, history);
  pair.chosen = chosen;
  pair.rejected = rejected;
  auto& p = pair.provenance;
  p.task_id = task.task_id;
  p.parent_trajectory_id = parent.id;
  p.step = step;
  p.branch_seed = branch_seed;
  p.mode = options.mode;
  p.round = options.round;
  p.parent_seed = parent.rng_trace.seed;
  p.parent_end = parent.end;
  p.sample_index = sample_index;
  p.difficulty = task.difficulty;
  return pair;
}

}  // namespace

PreferenceDataset build_preference_pairs(const std::vector<BranchedStep>& branched,
                                         const FailedTrajectorySet& failed, const TaskIndex& tasks,
                                         const PairBuildOptions& options) {
  const auto by_id = index_trajectories(failed);
  PreferenceDataset dataset(options.mode);
  for (const auto& step : branched) {
    const auto it = by_id.find(step.candidate.trajectory_id);
    require(it != by_id.end(), ErrorCode::invalid_argument,
            "branched step from unknown trajectory '" + step.candidate.trajectory_id + "'");
    const Trajectory& parent = *it->second;
    const auto& task = tasks.at(parent.task_id);
    const int t = step.candidate.step_index;

    std::vector<const BranchResult*> wins, losses;
    for (const auto& b : step.branches) (b.outcome == 1 ? wins : losses).push_back(&b);
    if (!wins.empty()) ++dataset.stats().verified_steps;

    int emitted = 0;
    auto emit = [&](int chosen, int rejected, const BranchResult& win) {
      if (chosen == rejected) return;
      if (options.max_pairs_per_step > 0 && emitted >= options.max_pairs_per_step) return;
      if (dataset.add(make_pair(task, parent, t, chosen, rejected, win.rng_seed, win.alternative.sample_index, options)))
        ++emitted;
    };
    for (const auto* win : wins) {
      if (options.mode == PairSourceMode::expert_pos_expert_neg) {
        for (const auto* loss : losses) emit(win->alternative.action, loss->alternative.action, *win);
      } else {
        emit(win->alternative.action, step.candidate.policy_action, *win);
      }
    }
    if (!wins.empty() && emitted == 0) ++dataset.stats().steps_without_pairs;
  }
  if (dataset.empty()) dataset.warn("no candidate passed verification; preference dataset is empty");
  return dataset;
}

PreferenceDataset build_unverified_pairs(const std::vector<CandidateCriticalStep>& candidates,
                                         const FailedTrajectorySet& failed, const TaskIndex& tasks,
                                         const SelectionThresholds& thresholds, const PairBuildOptions& options) {
  const auto by_id = index_trajectories(failed);
  PreferenceDataset dataset(options.mode);
  for (const auto& c : candidates) {
    const Trajectory& parent = *by_id.at(c.trajectory_id);
    const auto& task = tasks.at(parent.task_id);
    int emitted = 0;
    for (const auto& alt : c.alternatives) {
      if (!(alt.score.value > thresholds.gamma_high) || alt.action == c.policy_action) continue;
      if (options.max_pairs_per_step > 0 && emitted >= options.max_pairs_per_step) break;
      if (dataset.add(make_pair(task, parent, c.step_index, alt.action, c.policy_action, 0, alt.sample_index, options)))
        ++emitted;
    }
  }
  if (dataset.empty()) dataset.warn("no candidate steps selected; preference dataset is empty");
  return dataset;
}

std::string pair_to_json_line(const PreferencePair& pair) {
  nlohmann::ordered_json j;
  const auto& p = pair.provenance;
  j["schema"] = kPairSchema;
  j["task_id"] = p.task_id;
  j["step"] = p.step;
  j["state_context"] = pair.state_context;
  j["chosen"] = pair.chosen;
  j["rejected"] = pair.rejected;
  j["mode"] = mode_name(p.mode);
  j["branch_seed"] = p.branch_seed;
  j["round"] = p.round;
  j["parent_id"] = p.parent_trajectory_id;
  j["parent_seed"] = p.parent_seed;
  j["parent_end"] = p.parent_end == EndReason::answer ? "answer" : "horizon";
  j["sample_index"] = p.sample_index;
  j["difficulty"] = difficulty_name(p.difficulty);
  return j.dump();
}

PreferencePair pair_from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.value("schema", -1) != kPairSchema)
      fail(ErrorCode::schema_mismatch, "preference record schema mismatch, expected " + std::to_string(kPairSchema));
    PreferencePair pair;
    auto& p = pair.provenance;
    p.task_id = j.at("task_id").get<std::string>();
    p.step = j.at("step").get<int>();
    pair.state_context = j.at("state_context").get<std::string>();
    pair.chosen = j.at("chosen").get<int>();
    pair.rejected = j.at("rejected").get<int>();
    p.mode = parse_mode(j.at("mode").get<std::string>());
    p.branch_seed = j.at("branch_seed").get<std::uint64_t>();
    p.round = j.at("round").get<int>();
    p.parent_trajectory_id = j.value("parent_id", std::string{});
    p.parent_seed = j.value("parent_seed", std::uint64_t{0});
    p.parent_end = j.value("parent_end", std::string{"horizon"}) == "answer" ? EndReason::answer : EndReason::horizon;
    p.sample_index = j.value("sample_index", 0);
    p.difficulty = parse_difficulty(j.value("difficulty", std::string{"L1"}));
    return pair;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed preference record: ") + e.what());
  }
}

void write_dataset(std::ostream& out, const PreferenceDataset& dataset) {
  for (const auto& pair : dataset.pairs()) out << pair_to_json_line(pair) << '\n';
}

PreferenceDataset read_dataset(std::istream& in) {
  std::vector<PreferencePair> pairs;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) pairs.push_back(pair_from_json_line(line));
  PreferenceDataset dataset(pairs.empty() ? PairSourceMode::expert_pos_policy_neg : pairs.front().provenance.mode);
  for (auto& p : pairs) dataset.add(std::move(p));
  return dataset;
}

RoundArtifacts run_round(const PolicyParameters& params, const Featurizer& featurizer, const TaskIndex& tasks,
                         const RoundConfig& config, const ProcessRewardModel& prm, std::uint64_t master_seed,
                         int round) {
  RoundArtifacts out;
  out.rollouts = collect_rollouts(params, featurizer, tasks.tasks(), config.trials_per_task, master_seed, round,
                                  config.workers);
  out.failed = failed_subset(out.rollouts, round);

  ScanConfig scan = config.scan;
  if (config.pairs.mode == PairSourceMode::policy_pos_policy_neg) scan.proposer = Actor::policy;
  scan.score = config.strategy != SelectionStrategy::verification_only;
  out.scan = scan_steps(out.failed, params, featurizer, tasks, scan, prm, master_seed, config.workers);

  PairBuildOptions pairs = config.pairs;
  pairs.round = round;
  switch (config.strategy) {
    case SelectionStrategy::prm_and_verification: {
      out.candidates = select_from_scan(out.failed, out.scan, scan.thresholds);
      // Expert-negative pairs need failed expert branches too, so every
      // alternative of a selected step is verified in that mode.
      const auto budget = pairs.mode == PairSourceMode::expert_pos_expert_neg ? BranchBudget::all
                                                                              : BranchBudget::above_gamma_high;
      out.branched = verify_candidates(out.candidates, out.failed, params, featurizer, tasks, scan.thresholds,
                                       budget, master_seed, config.workers);
      out.dataset = build_preference_pairs(out.branched, out.failed, tasks, pairs);
      break;
    }
    case SelectionStrategy::verification_only: {
      for (const auto& s : out.scan) out.candidates.push_back(s.as_candidate());
      out.branched = verify_candidates(out.candidates, out.failed, params, featurizer, tasks, scan.thresholds,
                                       BranchBudget::all, master_seed, config.workers);
      out.dataset = build_preference_pairs(out.branched, out.failed, tasks, pairs);
      break;
    }
    case SelectionStrategy::prm_only:
      out.candidates = select_from_scan(out.failed, out.scan, scan.thresholds);
      out.dataset = build_unverified_pairs(out.candidates, out.failed, tasks, scan.thresholds, pairs);
      break;
  }
  return out;
}

ReplayAudit replay_pair(const PreferencePair& pair, const Trajectory& stored_parent, const PolicyParameters& params,
                        const Featurizer& featurizer, const TaskIndex& tasks) {
  const auto& p = pair.provenance;
  const auto& task = tasks.at(p.task_id);
  ReplayAudit audit;
  auto parent = rollout(params, featurizer, task, p.parent_seed);
  parent.id = stored_parent.id;
  parent.round = stored_parent.round;
  audit.parent_outcome = parent.outcome;
  audit.parent_matches = parent == stored_parent;
  ScoredAlternative alt;
  alt.action = pair.chosen;
  alt.sample_index = p.sample_index;
  const auto branch = branch_rollout(params, featurizer, task, parent, p.step, alt, p.branch_seed);
  audit.branch_outcome = branch.outcome;
  audit.chosen_matches = branch.branched_trajectory.steps[static_cast<std::size_t>(p.step - 1)].action == pair.chosen;
  return audit;
}

}  // namespace cso
