#include "cso/train.hpp"

#include <cmath>
#include <ostream>

#include "cso/error.hpp"
#include "cso/parallel.hpp"

namespace cso {

void DpoConfig::validate() const {
  require(beta > 0.0 && std::isfinite(beta), ErrorCode::invalid_argument, "beta must be positive");
  require(step_size > 0.0 && std::isfinite(step_size), ErrorCode::invalid_argument, "DPO step size must be positive");
  require(epochs >= 0, ErrorCode::invalid_argument, "DPO epochs must be nonnegative");
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double dpo_loss_from_margin(double beta, double margin) noexcept { return softplus(-beta * margin); }

double example_margin(const PolicyParameters& params, const DpoExample& example) {
  double margin = 0.0;
  for (const auto& term : example.terms) margin += term.sign * (log_prob(params, term.features, term.action) - term.ref_logp);
  return margin;
}

namespace {

DpoExample compile_pair(const PolicyParameters& ref, const Featurizer& featurizer, const PreferencePair& pair) {
  require(pair.chosen != pair.rejected, ErrorCode::invalid_argument, "preference pair with chosen == rejected");
  const auto context = decode_state_context(pair.state_context);
  auto features = featurizer(context.query, context.history);
  DpoExample ex;
  ex.terms.push_back({features, pair.chosen, 1.0, log_prob(ref, features, pair.chosen)});
  ex.terms.push_back({std::move(features), pair.rejected, -1.0, log_prob(ref, ex.terms[0].features, pair.rejected)});
  return ex;
}

void append_trajectory_terms(const PolicyParameters& ref, const Featurizer& featurizer, const TaskSpec& task,
                             const Trajectory& t, double sign, DpoExample& ex) {
  std::vector<HistoryEntry> history;
  for (const auto& step : t.steps) {
    auto f = featurizer(task.query, history);
    const double ref_logp = log_prob(ref, f, step.action);
    ex.terms.push_back({std::move(f), step.action, sign, ref_logp});
    history.push_back({step.action, step.observation.payload});
  }
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<DpoExample> compile_pairs(const PolicyParameters& ref, const Featurizer& featurizer,
                                      const std::vector<PreferencePair>& pairs) {
  std::vector<DpoExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(compile_pair(ref, featurizer, p));
  return out;
}

double dpo_pair_loss(const PolicyParameters& params, const PolicyParameters& ref, const Featurizer& featurizer,
                     const PreferencePair& pair, double beta) {
  require(beta > 0.0, ErrorCode::invalid_argument, "beta must be positive");
  return dpo_loss_from_margin(beta, example_margin(params, compile_pair(ref, featurizer, pair)));
}

BatchEvaluation evaluate_examples(const PolicyParameters& params, const std::vector<DpoExample>& examples,
                                  double beta, int workers, bool with_gradient) {
  require(!examples.empty(), ErrorCode::invalid_argument, "DPO batch is empty");
  const std::size_t width = params.weights.size();
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  // Slots [0, width) hold the gradient, then the loss and margin sums.
  auto acc = deterministic_sum(examples.size(), (with_gradient ? width : 0) + 2, workers,
                               [&](std::size_t i, std::vector<double>& sum) {
                                 const auto& ex = examples[i];
                                 std::vector<std::vector<double>> lps;
                                 lps.reserve(ex.terms.size());
                                 double margin = 0.0;
                                 for (const auto& term : ex.terms) {
                                   lps.push_back(log_probs(params, term.features));
                                   margin += term.sign * (lps.back()[static_cast<std::size_t>(term.action)] -
                                                          term.ref_logp);
                                 }
                                 const double loss = dpo_loss_from_margin(beta, margin);
                                 if (!std::isfinite(loss) || !std::isfinite(margin))
                                   fail(ErrorCode::numeric, "non-finite DPO loss");
                                 sum[sum.size() - 2] += loss;
                                 sum[sum.size() - 1] += margin;
                                 if (!with_gradient) return;
                                 // dL/dmargin = -beta * sigmoid(-beta * margin)
                                 const double dmargin = -beta / (1.0 + std::exp(beta * margin));
                                 std::span<double> grad(sum.data(), width);
                                 for (std::size_t j = 0; j < ex.terms.size(); ++j) {
                                   const auto& term = ex.terms[j];
                                   add_log_prob_gradient(params, term.features, lps[j], term.action,
                                                         dmargin * term.sign * inv_n, grad);
                                 }
                               });
  BatchEvaluation out;
  out.mean_loss = acc[acc.size() - 2] * inv_n;
  out.mean_margin = acc[acc.size() - 1] * inv_n;
  if (with_gradient) {
    acc.resize(width);
    for (double g : acc)
      if (!std::isfinite(g)) fail(ErrorCode::numeric, "non-finite DPO gradient");
    out.gradient = std::move(acc);
  }
  return out;
}

std::vector<double> dpo_gradient(const PolicyParameters& params, const PolicyParameters& ref,
                                 const Featurizer& featurizer, const std::vector<PreferencePair>& batch, double beta,
                                 int workers) {
  require(beta > 0.0, ErrorCode::invalid_argument, "beta must be positive");
  return evaluate_examples(params, compile_pairs(ref, featurizer, batch), beta, workers, true).gradient;
}

TrainResult train_dpo_examples(const PolicyParameters& params, const std::vector<DpoExample>& examples,
                               const DpoConfig& config) {
  config.validate();
  require(!examples.empty(), ErrorCode::invalid_argument, "DPO training requires a nonempty dataset");
  check_finite(params);
  TrainResult result{params, {}};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto eval = evaluate_examples(result.params, examples, config.beta, config.workers, true);
    result.metrics.push_back({epoch, eval.mean_loss, eval.mean_margin, norm2(eval.gradient)});
    for (std::size_t k = 0; k < eval.gradient.size(); ++k) result.params.weights[k] -= config.step_size * eval.gradient[k];
    ++result.params.version;
  }
  return result;
}

TrainResult train_dpo(const PolicyParameters& params, const PolicyParameters& ref, const Featurizer& featurizer,
                      const PreferenceDataset& dataset, const DpoConfig& config) {
  require(!dataset.empty(), ErrorCode::invalid_argument, "DPO training requires a nonempty preference dataset");
  return train_dpo_examples(params, compile_pairs(ref, featurizer, dataset.pairs()), config);
}

void write_epoch_metrics(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  out << "epoch,mean_loss,mean_margin,grad_norm\n";
  out.precision(17);
  for (const auto& m : metrics)
    out << m.epoch << ',' << m.mean_loss << ',' << m.mean_margin << ',' << m.grad_norm << '\n';
}

const char* baseline_name(BaselineKind kind) noexcept {
  switch (kind) {
    case BaselineKind::eto: return "eto";
    case BaselineKind::rft: return "rft";
    case BaselineKind::step_dpo: return "step_dpo";
    case BaselineKind::ipr: return "ipr";
  }
  return "?";
}

BaselineKind parse_baseline(std::string_view name) {
  if (name == "eto") return BaselineKind::eto;
  if (name == "rft") return BaselineKind::rft;
  if (name == "step_dpo") return BaselineKind::step_dpo;
  if (name == "ipr") return BaselineKind::ipr;
  fail(ErrorCode::invalid_argument, "unknown baseline '" + std::string(name) + "'");
}

std::vector<DpoExample> compile_trajectory_pairs(const PolicyParameters& ref, const Featurizer& featurizer,
                                                 const TaskIndex& tasks, const std::vector<TrajectoryPair>& pairs) {
  std::vector<DpoExample> out;
  for (const auto& p : pairs) {
    const auto& task = tasks.at(p.task_id);
    DpoExample ex;
    append_trajectory_terms(ref, featurizer, task, p.chosen, 1.0, ex);
    append_trajectory_terms(ref, featurizer, task, p.rejected, -1.0, ex);
    out.push_back(std::move(ex));
  }
  return out;
}

std::size_t BaselineDataset::size() const noexcept {
  switch (kind) {
    case BaselineKind::eto: return trajectories.size();
    case BaselineKind::rft: return demos.size();
    default: return steps.size();
  }
}

namespace {

std::unordered_map<std::string, const Trajectory*> first_successes(const std::vector<Trajectory>& rollouts) {
  std::unordered_map<std::string, const Trajectory*> out;
  for (const auto& t : rollouts)
    if (t.outcome == 1) out.emplace(t.task_id, &t);
  return out;
}

PreferencePair step_pair(const TaskSpec& task, const Trajectory& parent, int step, int chosen, int rejected,
                         int round, int sample_index) {
  PreferencePair pair;
  std::vector<HistoryEntry> history;
  for (int i = 0; i + 1 < step; ++i)
    history.push_back({parent.steps[static_cast<std::size_t>(i)].action,
                       parent.steps[static_cast<std::size_t>(i)].observation.payload});
  pair.state_context = encode_state_context(task.query, history);
  pair.chosen = chosen;
  pair.rejected = rejected;
  auto& p = pair.provenance;
  p.task_id = task.task_id;
  p.parent_trajectory_id = parent.id;
  p.step = step;
  p.round = round;
  p.parent_seed = parent.rng_trace.seed;
  p.parent_end = parent.end;
  p.sample_index = sample_index;
  p.difficulty = task.difficulty;
  return pair;
}

}  // namespace

BaselineDataset build_baseline_dataset(BaselineKind kind, const BaselineInputs& in) {
  require(in.tasks != nullptr, ErrorCode::invalid_argument, "baseline construction needs the task set");
  BaselineDataset out;
  out.kind = kind;
  switch (kind) {
    case BaselineKind::eto: {
      require(in.expert_rollouts && in.failed, ErrorCode::invalid_argument,
              "eto needs expert rollouts and failed policy trajectories");
      const auto experts = first_successes(*in.expert_rollouts);
      for (const auto& failed : in.failed->trajectories) {
        const auto it = experts.find(failed.task_id);
        if (it == experts.end()) continue;
        out.trajectories.push_back({failed.task_id, *it->second, failed});
      }
      break;
    }
    case BaselineKind::rft: {
      require(in.policy_rollouts != nullptr, ErrorCode::invalid_argument, "rft needs policy rollouts");
      for (const auto& t : *in.policy_rollouts)
        if (t.outcome == 1) out.demos.add(in.tasks->at(t.task_id), t);
      break;
    }
    case BaselineKind::step_dpo: {
      require(in.scan && in.failed, ErrorCode::invalid_argument, "step_dpo needs a PRM-scored scan");
      for (const auto& step : *in.scan) {
        if (step.alternatives.empty()) continue;
        const ScoredAlternative* best = &step.alternatives.front();
        for (const auto& alt : step.alternatives)
          if (alt.score.value > best->score.value) best = &alt;
        if (!(step.policy_score.value < best->score.value) || best->action == step.policy_action) continue;
        const auto& parent = in.failed->trajectories[step.trajectory_index];
        out.steps.add(step_pair(in.tasks->at(parent.task_id), parent, step.step_index, best->action,
                                step.policy_action, in.round, best->sample_index));
      }
      break;
    }
    case BaselineKind::ipr: {
      require(in.expert_rollouts && in.failed, ErrorCode::invalid_argument,
              "ipr needs expert rollouts and failed policy trajectories");
      const auto experts = first_successes(*in.expert_rollouts);
      for (const auto& failed : in.failed->trajectories) {
        const auto it = experts.find(failed.task_id);
        if (it == experts.end()) continue;
        const auto& expert = *it->second;
        const auto& task = in.tasks->at(failed.task_id);
        const int n = std::min(expert.length(), failed.length());
        for (int t = 1; t <= n; ++t) {
          const int chosen = expert.steps[static_cast<std::size_t>(t - 1)].action;
          const int rejected = failed.steps[static_cast<std::size_t>(t - 1)].action;
          if (chosen == rejected) continue;
          out.steps.add(step_pair(task, failed, t, chosen, rejected, in.round, 0));
        }
      }
      break;
    }
  }
  return out;
}

namespace {

struct RoundOutcome {
  RoundRecord record;
  std::optional<PolicyParameters> params;
};

RoundOutcome run_baseline_round(const PolicyParameters& current, const Featurizer& featurizer, const TaskIndex& tasks,
                                const MethodSpec& method, const IterationConfig& config,
                                const ProcessRewardModel& prm, std::uint64_t master_seed, int round) {
  RoundOutcome out;
  auto& rec = out.record;
  const int workers = method.round.workers;
  const auto rollouts = collect_rollouts(current, featurizer, tasks.tasks(), method.round.trials_per_task,
                                         master_seed, round, workers);
  const auto failed = failed_subset(rollouts, round);
  rec.failed_trajectories = static_cast<int>(failed.trajectories.size());
  rec.failed_steps = failed.total_steps;

  BaselineInputs in;
  in.tasks = &tasks;
  in.policy_rollouts = &rollouts;
  in.failed = &failed;
  in.round = round;
  std::vector<Trajectory> experts;
  std::vector<ScoredStep> scan;
  const auto kind = method.baseline;
  if (kind == BaselineKind::eto || kind == BaselineKind::ipr) {
    RolloutSpec spec{Actor::expert, config.expert_epsilon};
    experts = collect_rollouts(current, featurizer, tasks.tasks(), config.expert_trials, master_seed, round, workers,
                               spec);
    in.expert_rollouts = &experts;
  }
  if (kind == BaselineKind::step_dpo) {
    ScanConfig sc = method.round.scan;
    sc.score = true;
    scan = scan_steps(failed, current, featurizer, tasks, sc, prm, master_seed, workers);
    in.scan = &scan;
  }
  auto data = build_baseline_dataset(kind, in);
  rec.examples = data.size();
  rec.artifacts.rollouts = rollouts;
  rec.artifacts.failed = failed;
  rec.artifacts.scan = std::move(scan);
  if (data.size() == 0) {
    rec.carried_forward = true;
    rec.warnings.push_back(std::string(baseline_name(kind)) + " round " + std::to_string(round) +
                           " produced no training data; parameters carried forward");
    return out;
  }
  DpoConfig dpo = config.dpo;
  dpo.workers = workers;
  switch (kind) {
    case BaselineKind::eto: {
      auto result = train_dpo_examples(current, compile_trajectory_pairs(current, featurizer, tasks, data.trajectories),
                                       dpo);
      rec.metrics = std::move(result.metrics);
      out.params = std::move(result.params);
      break;
    }
    case BaselineKind::rft: {
      auto result = sft_train(current, featurizer, data.demos, {dpo.step_size, dpo.epochs, workers});
      for (std::size_t e = 0; e + 1 < result.loss_history.size(); ++e)
        rec.metrics.push_back({static_cast<int>(e), result.loss_history[e], 0.0, 0.0});
      out.params = std::move(result.params);
      break;
    }
    default: {
      auto result = train_dpo(current, current, featurizer, data.steps, dpo);
      rec.metrics = std::move(result.metrics);
      out.params = std::move(result.params);
      rec.dataset = std::move(data.steps);
      break;
    }
  }
  if (kind == BaselineKind::eto || kind == BaselineKind::rft) rec.dataset = std::move(data.steps);
  return out;
}

RoundOutcome run_cso_round(const PolicyParameters& current, const Featurizer& featurizer, const TaskIndex& tasks,
                           const MethodSpec& method, const IterationConfig& config, const ProcessRewardModel& prm,
                           std::uint64_t master_seed, int round) {
  RoundOutcome out;
  auto& rec = out.record;
  auto artifacts = run_round(current, featurizer, tasks, method.round, prm, master_seed, round);
  rec.failed_trajectories = static_cast<int>(artifacts.failed.trajectories.size());
  rec.failed_steps = artifacts.failed.total_steps;
  rec.examples = artifacts.dataset.size();
  rec.warnings = artifacts.dataset.warnings();
  if (artifacts.dataset.empty()) {
    rec.carried_forward = true;
    rec.warnings.push_back("round " + std::to_string(round) + " produced no preference pairs; parameters carried forward");
  } else {
    DpoConfig dpo = config.dpo;
    dpo.workers = method.round.workers;
    auto result = train_dpo(current, current, featurizer, artifacts.dataset, dpo);
    rec.metrics = std::move(result.metrics);
    out.params = std::move(result.params);
  }
  rec.dataset = artifacts.dataset;
  rec.artifacts = std::move(artifacts);
  return out;
}

}  // namespace

IterationState iterate(const PolicyParameters& initial, const Featurizer& featurizer, const TaskIndex& tasks,
                       const MethodSpec& method, const IterationConfig& config, const ProcessRewardModel& prm,
                       std::uint64_t master_seed, const RoundEvaluator& evaluate) {
  require(config.rounds >= 1, ErrorCode::invalid_argument, "rounds must be at least 1");
  config.dpo.validate();
  IterationState state;
  state.history.emplace_back(initial, 0, "initial");
  if (evaluate) state.eval_success.push_back(evaluate(initial, 0));
  for (int i = 1; i <= config.rounds; ++i) {
    // Round i starts from and is anchored to the previous round's policy.
    const PolicyParameters& ref = state.history[static_cast<std::size_t>(i - 1)].params();
    state.refs.push_back(ref);
    auto outcome = method.kind == MethodSpec::Kind::cso
                       ? run_cso_round(ref, featurizer, tasks, method, config, prm, master_seed, i)
                       : run_baseline_round(ref, featurizer, tasks, method, config, prm, master_seed, i);
    outcome.record.round = i;
    PolicyParameters next = outcome.params ? std::move(*outcome.params) : ref;
    state.history.emplace_back(std::move(next), i, method.label);
    if (evaluate) state.eval_success.push_back(evaluate(state.history.back().params(), i));
    state.rounds.push_back(std::move(outcome.record));
    state.round = i;
  }
  return state;
}

IterationState iterate_cso(const PolicyParameters& initial, const Featurizer& featurizer, const TaskIndex& tasks,
                           const RoundConfig& round, const IterationConfig& config, const ProcessRewardModel& prm,
                           std::uint64_t master_seed, const RoundEvaluator& evaluate) {
  MethodSpec method;
  method.round = round;
  return iterate(initial, featurizer, tasks, method, config, prm, master_seed, evaluate);
}

int bon_select(const PolicyParameters& params, const Featurizer& featurizer, const ProcessRewardModel& prm,
               const TaskSpec& task, const WorldState& state, int k, RandomStream& rng) {
  require(k >= 1, ErrorCode::invalid_argument, "best-of-N needs k >= 1");
  const auto features = featurizer(task, state);
  int best_action = -1;
  double best_score = -1.0;
  for (int j = 1; j <= k; ++j) {
    const int action = sample_action(params, features, rng);
    RandomStream score_rng(derive_seed(rng.key(), {"bon-prm", state.step_index, j}));
    const double score = prm.score(task, state, action, score_rng).value;
    if (score > best_score) {
      best_score = score;
      best_action = action;
    }
  }
  return best_action;
}

}  // namespace cso
