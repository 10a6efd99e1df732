#include "cso/commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cso/error.hpp"
#include "cso/metrics.hpp"
#include "cso/records.hpp"

namespace cso {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-tasks", "sft",      "collect", "scan",    "branch", "build-prefs",
                                              "train-dpo", "baseline", "iterate", "eval",    "report"};
  return names;
}

namespace {

/// Shared state for one command invocation.
struct Context {
  const RunConfig& config;
  const CommandOptions& options;
  ArtifactLayout layout;
  CommandResult result;
  json summary = json::object();

  Context(const RunConfig& c, const CommandOptions& o) : config(c), options(o), layout{c.output_dir} {}

  Featurizer featurizer() const {
    return Featurizer(Vocabulary(config.world), config.features);
  }
  std::uint64_t seed() const { return options.seed.value_or(config.seeds.front()); }
  void wrote(const fs::path& path) { result.written.push_back(path); }
  void warn(const std::string& message) { result.warnings.push_back(message); }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_artifact, "missing artifact " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void require_artifact(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::missing_artifact, "missing artifact " + path.string());
}

std::vector<TaskSpec> load_tasks(const fs::path& path) { return read_jsonl(path, task_from_json_line); }

std::vector<Trajectory> load_trajectories(const fs::path& path) {
  return read_jsonl(path, trajectory_from_json_line);
}

void save_trajectories(Context& ctx, const fs::path& path, const std::vector<Trajectory>& items) {
  write_jsonl(path, items, trajectory_to_json_line);
  ctx.wrote(path);
}

PolicyParameters load_policy(const Context& ctx, const fs::path& path) {
  require_artifact(path);
  auto params = load_parameters(path).params();
  const Vocabulary vocab(ctx.config.world);
  if (params.actions != vocab.action_count() || params.features != ctx.config.features.dimension)
    fail(ErrorCode::schema_mismatch, path.string() + " has shape " + std::to_string(params.actions) + "x" +
                                         std::to_string(params.features) + ", config expects " +
                                         std::to_string(vocab.action_count()) + "x" +
                                         std::to_string(ctx.config.features.dimension));
  return params;
}

void save_policy(Context& ctx, const fs::path& path, const PolicyParameters& params, int round,
                 const std::string& producer) {
  fs::create_directories(path.parent_path());
  save_parameters(path, PolicySnapshot(params, round, producer));
  ctx.wrote(path);
  ctx.wrote(path.string() + ".json");
}

FailedTrajectorySet load_failed(const fs::path& path, int round) {
  FailedTrajectorySet failed;
  failed.round_index = round;
  for (auto& t : load_trajectories(path)) failed.add(std::move(t));
  return failed;
}

PreferenceDataset load_prefs(const fs::path& path, PairSourceMode mode) {
  PreferenceDataset data(mode);
  for (auto& pair : read_jsonl(path, pair_from_json_line)) data.add(std::move(pair));
  return data;
}

void save_prefs(Context& ctx, const fs::path& path, const PreferenceDataset& data) {
  write_jsonl(path, data.pairs(), pair_to_json_line);
  ctx.wrote(path);
}

void save_metrics(Context& ctx, const fs::path& path, const std::vector<EpochMetrics>& metrics) {
  std::ostringstream s;
  write_epoch_metrics(s, metrics);
  write_text(path, s.str());
  ctx.wrote(path);
}

// Mirrors the branch of run_round that the configured strategy takes.
ScanConfig effective_scan(const RunConfig& config) {
  ScanConfig scan = config.round_config().scan;
  if (config.pair_mode == PairSourceMode::policy_pos_policy_neg) scan.proposer = Actor::policy;
  scan.score = config.strategy != SelectionStrategy::verification_only;
  return scan;
}

BranchBudget effective_budget(const RunConfig& config) {
  if (config.strategy == SelectionStrategy::verification_only) return BranchBudget::all;
  return config.pair_mode == PairSourceMode::expert_pos_expert_neg ? BranchBudget::all
                                                                   : BranchBudget::above_gamma_high;
}

PairBuildOptions pair_options(const RunConfig& config, int round) {
  PairBuildOptions p = config.round_config().pairs;
  p.round = round;
  return p;
}

void ensure_round(const Context& ctx) {
  require(ctx.options.round >= 1, ErrorCode::invalid_argument, "--round must be at least 1 for this command");
}

// ---- commands ----

void cmd_gen_tasks(Context& ctx) {
  const auto& c = ctx.config;
  const auto tasks = generate_tasks(c.task_count, c.mix, c.world, c.task_seed);
  const auto eval = generate_tasks(c.eval_task_count, c.mix, c.world, c.eval_task_seed);
  write_jsonl(ctx.layout.tasks(), tasks, task_to_json_line);
  write_jsonl(ctx.layout.eval_tasks(), eval, task_to_json_line);
  ctx.wrote(ctx.layout.tasks());
  ctx.wrote(ctx.layout.eval_tasks());
  ctx.summary["tasks"] = tasks.size();
  ctx.summary["eval_tasks"] = eval.size();
}

void cmd_sft(Context& ctx) {
  const auto& c = ctx.config;
  const auto tasks = load_tasks(ctx.layout.tasks());
  const auto fz = ctx.featurizer();
  const auto initial = PolicyParameters::zeros(fz.vocabulary().action_count(), fz.dimension());
  const auto rollouts = collect_rollouts(initial, fz, tasks, c.demo_trials, c.seed, 0, c.workers,
                                         {Actor::expert, c.expert_epsilon});
  const TaskIndex index(tasks);
  DemoDataset demos;
  std::vector<Trajectory> kept;
  for (const auto& t : rollouts) {
    if (t.outcome != 1) continue;
    demos.add(index.at(t.task_id), t);
    kept.push_back(t);
  }
  require(!demos.empty(), ErrorCode::invalid_argument, "expert produced no successful demonstrations");
  save_trajectories(ctx, ctx.layout.demos(), kept);
  SftConfig sft = c.sft;
  sft.workers = c.workers;
  const auto result = sft_train(initial, fz, demos, sft);
  save_policy(ctx, ctx.layout.sft_policy(), result.params, 0, "sft");
  std::ostringstream s;
  s << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e)
    s << e << ',' << format_double(result.loss_history[e]) << '\n';
  const auto metrics = ctx.layout.sft_dir() / "sft_metrics.csv";
  write_text(metrics, s.str());
  ctx.wrote(metrics);
  ctx.summary["demos"] = demos.size();
  ctx.summary["final_loss"] = result.loss_history.back();
}

void cmd_collect(Context& ctx) {
  ensure_round(ctx);
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  const auto seed = ctx.seed();
  const auto tasks = load_tasks(ctx.layout.tasks());
  const auto params = load_policy(ctx, ctx.layout.policy(c.method, seed, r - 1));
  const auto rollouts = collect_rollouts(params, ctx.featurizer(), tasks, c.trials_per_task, seed, r, c.workers);
  const auto failed = failed_subset(rollouts, r);
  const auto dir = ctx.layout.round_dir(c.method, seed, r);
  save_trajectories(ctx, dir / "rollouts.jsonl", rollouts);
  save_trajectories(ctx, dir / "failed.jsonl", failed.trajectories);
  ctx.summary["rollouts"] = rollouts.size();
  ctx.summary["failed"] = failed.trajectories.size();
  ctx.summary["failed_steps"] = failed.total_steps;
}

void cmd_scan(Context& ctx) {
  ensure_round(ctx);
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  const auto seed = ctx.seed();
  const auto dir = ctx.layout.round_dir(c.method, seed, r);
  const auto failed = load_failed(dir / "failed.jsonl", r);
  const TaskIndex tasks(load_tasks(ctx.layout.tasks()));
  const auto params = load_policy(ctx, ctx.layout.policy(c.method, seed, r - 1));
  const auto scan_config = effective_scan(c);
  const ProcessRewardModel prm(c.prm);
  const auto scan = scan_steps(failed, params, ctx.featurizer(), tasks, scan_config, prm, seed, c.workers);
  std::vector<CandidateCriticalStep> candidates;
  if (c.strategy == SelectionStrategy::verification_only) {
    for (const auto& s : scan) candidates.push_back(s.as_candidate());
  } else {
    candidates = select_from_scan(failed, scan, scan_config.thresholds);
  }
  write_jsonl(dir / "scan.jsonl", scan, scored_step_to_json_line);
  write_jsonl(dir / "candidates.jsonl", candidates, candidate_to_json_line);
  ctx.wrote(dir / "scan.jsonl");
  ctx.wrote(dir / "candidates.jsonl");
  ctx.summary["scanned_steps"] = scan.size();
  ctx.summary["candidates"] = candidates.size();
}

void cmd_branch(Context& ctx) {
  ensure_round(ctx);
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  const auto seed = ctx.seed();
  const auto dir = ctx.layout.round_dir(c.method, seed, r);
  const auto candidates = read_jsonl(dir / "candidates.jsonl", candidate_from_json_line);
  const auto failed = load_failed(dir / "failed.jsonl", r);
  const TaskIndex tasks(load_tasks(ctx.layout.tasks()));
  const auto params = load_policy(ctx, ctx.layout.policy(c.method, seed, r - 1));
  std::vector<BranchedStep> branched;
  if (c.strategy == SelectionStrategy::prm_only) {
    ctx.warn("strategy prm_only runs no branch rollouts");
  } else {
    branched = verify_candidates(candidates, failed, params, ctx.featurizer(), tasks, c.thresholds,
                                 effective_budget(c), seed, c.workers);
  }
  write_jsonl(dir / "branches.jsonl", branched, branched_step_to_json_line);
  ctx.wrote(dir / "branches.jsonl");
  std::size_t rollouts = 0;
  for (const auto& b : branched) rollouts += b.branches.size();
  ctx.summary["branched_steps"] = branched.size();
  ctx.summary["branch_rollouts"] = rollouts;
}

void cmd_build_prefs(Context& ctx) {
  ensure_round(ctx);
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  const auto seed = ctx.seed();
  const auto dir = ctx.layout.round_dir(c.method, seed, r);
  const auto failed = load_failed(dir / "failed.jsonl", r);
  const TaskIndex tasks(load_tasks(ctx.layout.tasks()));
  PreferenceDataset data;
  if (c.strategy == SelectionStrategy::prm_only) {
    const auto candidates = read_jsonl(dir / "candidates.jsonl", candidate_from_json_line);
    data = build_unverified_pairs(candidates, failed, tasks, c.thresholds, pair_options(c, r));
  } else {
    const auto branched = read_jsonl(dir / "branches.jsonl", branched_step_from_json_line);
    data = build_preference_pairs(branched, failed, tasks, pair_options(c, r));
  }
  for (const auto& w : data.warnings()) ctx.warn(w);
  save_prefs(ctx, dir / "prefs.jsonl", data);
  const auto stats = supervision_stats(data, failed);
  ctx.summary["pairs"] = data.size();
  ctx.summary["supervised_steps"] = stats.supervised_steps;
  ctx.summary["failed_step_total"] = stats.failed_step_total;
}

void cmd_train_dpo(Context& ctx) {
  ensure_round(ctx);
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  const auto seed = ctx.seed();
  const auto dir = ctx.layout.round_dir(c.method, seed, r);
  const auto data = load_prefs(dir / "prefs.jsonl", c.pair_mode);
  const auto ref = load_policy(ctx, ctx.layout.policy(c.method, seed, r - 1));
  std::vector<EpochMetrics> metrics;
  PolicyParameters next = ref;
  if (data.empty()) {
    ctx.warn("round " + std::to_string(r) + " produced no preference pairs; parameters carried forward");
  } else {
    DpoConfig dpo = c.dpo;
    dpo.workers = c.workers;
    auto result = train_dpo(ref, ref, ctx.featurizer(), data, dpo);
    next = std::move(result.params);
    metrics = std::move(result.metrics);
  }
  save_policy(ctx, dir / "policy.bin", next, r, c.method);
  save_metrics(ctx, dir / "dpo_metrics.csv", metrics);
  ctx.summary["pairs"] = data.size();
  ctx.summary["carried_forward"] = data.empty();
  if (!metrics.empty()) ctx.summary["final_loss"] = metrics.back().mean_loss;
}

// ---- iterate / baseline ----

void ensure_upstream(Context& ctx) {
  if (!fs::exists(ctx.layout.tasks()) || !fs::exists(ctx.layout.eval_tasks())) cmd_gen_tasks(ctx);
  if (!fs::exists(ctx.layout.sft_policy())) cmd_sft(ctx);
}

EvalReport evaluate_seeds(const Context& ctx, const std::vector<PolicyParameters>& per_seed,
                          const std::vector<TaskSpec>& eval_tasks, const std::string& method, int round) {
  const auto& c = ctx.config;
  const ProcessRewardModel prm(c.prm);
  std::optional<BonOptions> bon;
  if (c.bon_k > 0) bon = BonOptions{&prm, c.bon_k};
  EvalReport merged;
  merged.method = method;
  merged.round = round;
  merged.trials = c.eval_trials;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) {
    const auto r = evaluate(per_seed[i], ctx.featurizer(), eval_tasks, c.eval_trials, {c.seeds[i]}, c.workers, bon);
    merged.seeds.push_back(c.seeds[i]);
    for (int l = 0; l < 3; ++l) {
      merged.successes[l] += r.successes[l];
      merged.counts[l] += r.counts[l];
    }
    merged.per_seed.push_back(r.per_seed.front());
  }
  return merged;
}

void write_round(Context& ctx, const std::string& method, bool baseline, std::uint64_t seed,
                 const IterationState& state, std::size_t i) {
  const auto& rec = state.rounds[i];
  const int r = rec.round;
  const auto dir = ctx.layout.round_dir(method, seed, r);
  const auto& a = rec.artifacts;
  save_trajectories(ctx, dir / "rollouts.jsonl", a.rollouts);
  save_trajectories(ctx, dir / "failed.jsonl", a.failed.trajectories);
  if (!baseline || !a.scan.empty()) {
    write_jsonl(dir / "scan.jsonl", a.scan, scored_step_to_json_line);
    ctx.wrote(dir / "scan.jsonl");
  }
  if (!baseline) {
    write_jsonl(dir / "candidates.jsonl", a.candidates, candidate_to_json_line);
    write_jsonl(dir / "branches.jsonl", a.branched, branched_step_to_json_line);
    ctx.wrote(dir / "candidates.jsonl");
    ctx.wrote(dir / "branches.jsonl");
  }
  save_prefs(ctx, dir / "prefs.jsonl", rec.dataset);
  save_metrics(ctx, dir / "dpo_metrics.csv", rec.metrics);
  save_policy(ctx, dir / "policy.bin", state.history[i + 1].params(), r, method);
  for (const auto& w : rec.warnings) ctx.warn("seed " + std::to_string(seed) + ": " + w);
}

void run_iteration(Context& ctx, const MethodSpec& method) {
  const auto& c = ctx.config;
  ensure_upstream(ctx);
  const TaskIndex tasks(load_tasks(ctx.layout.tasks()));
  const auto eval_tasks = load_tasks(ctx.layout.eval_tasks());
  const auto sft = load_policy(ctx, ctx.layout.sft_policy());
  const auto fz = ctx.featurizer();
  const ProcessRewardModel prm(c.prm);
  const auto iteration = c.iteration_config();
  const std::string& label = method.label;

  std::vector<std::vector<PolicyParameters>> per_round(static_cast<std::size_t>(c.rounds) + 1);
  std::ostringstream supervision;
  write_supervision_header(supervision);
  json seeds_summary = json::array();
  for (const auto seed : c.seeds) {
    const auto state = iterate(sft, fz, tasks, method, iteration, prm, seed);
    save_policy(ctx, ctx.layout.round_dir(label, seed, 0) / "policy.bin", state.history[0].params(), 0, "sft");
    json rounds = json::array();
    for (std::size_t i = 0; i < state.rounds.size(); ++i) {
      write_round(ctx, label, method.kind == MethodSpec::Kind::baseline, seed, state, i);
      const auto& rec = state.rounds[i];
      const auto stats = supervision_stats(rec.dataset, rec.artifacts.failed);
      write_supervision_row(supervision, label, seed, rec.round, stats);
      rounds.push_back({{"round", rec.round},
                        {"failed", rec.failed_trajectories},
                        {"examples", rec.examples},
                        {"carried_forward", rec.carried_forward}});
    }
    for (std::size_t i = 0; i < state.history.size(); ++i) per_round[i].push_back(state.history[i].params());
    seeds_summary.push_back({{"seed", seed}, {"rounds", rounds}});
  }

  const auto mdir = ctx.layout.method_dir(label);
  std::ostringstream curve;
  std::ostringstream report;
  write_curve_header(curve);
  write_eval_csv_header(report);
  json success = json::array();
  for (int r = 0; r <= c.rounds; ++r) {
    const auto rep = evaluate_seeds(ctx, per_round[static_cast<std::size_t>(r)], eval_tasks, label, r);
    write_curve_row(curve, r, label, rep.overall(), rep.standard_error());
    write_eval_rows(report, rep);
    success.push_back(rep.overall());
  }
  write_text(mdir / "iteration_curve.csv", curve.str());
  write_text(mdir / "eval_report.csv", report.str());
  write_text(mdir / "supervision_stats.csv", supervision.str());
  ctx.wrote(mdir / "iteration_curve.csv");
  ctx.wrote(mdir / "eval_report.csv");
  ctx.wrote(mdir / "supervision_stats.csv");
  ctx.summary["method"] = label;
  ctx.summary["seeds"] = seeds_summary;
  ctx.summary["success_by_round"] = success;
}

void cmd_iterate(Context& ctx) { run_iteration(ctx, ctx.config.method_spec()); }

void cmd_baseline(Context& ctx) {
  require(!ctx.options.kind.empty(), ErrorCode::invalid_argument,
          "baseline needs --kind (eto, rft, step_dpo or ipr)");
  MethodSpec m = ctx.config.method_spec();
  m.kind = MethodSpec::Kind::baseline;
  m.baseline = parse_baseline(ctx.options.kind);
  m.label = baseline_name(m.baseline);
  run_iteration(ctx, m);
}

// ---- eval / report ----

void cmd_eval(Context& ctx) {
  const auto& c = ctx.config;
  const int r = ctx.options.round;
  require(r >= 0, ErrorCode::invalid_argument, "--round must be non-negative");
  const std::string method = ctx.options.kind.empty() ? c.method : ctx.options.kind;
  const auto eval_tasks = load_tasks(ctx.layout.eval_tasks());
  std::vector<PolicyParameters> per_seed;
  for (const auto seed : c.seeds) per_seed.push_back(load_policy(ctx, ctx.layout.policy(method, seed, r)));
  const auto rep = evaluate_seeds(ctx, per_seed, eval_tasks, r == 0 ? "sft" : method, r);
  std::ostringstream s;
  write_eval_csv_header(s);
  write_eval_rows(s, rep);
  const auto path = ctx.layout.evals_dir() / ((r == 0 ? std::string("sft") : method) + "_r" + std::to_string(r) +
                                              ".csv");
  write_text(path, s.str());
  ctx.wrote(path);
  ctx.summary["method"] = rep.method;
  ctx.summary["round"] = r;
  ctx.summary["success"] = rep.overall();
  ctx.summary["stderr"] = rep.standard_error();
  ctx.summary["bon_k"] = c.bon_k;
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Concatenates CSV files that share a header.
std::string merge_csv(const std::vector<fs::path>& files, const std::string& header) {
  std::string out = header;
  for (const auto& f : files) {
    std::istringstream in(read_text(f));
    std::string line;
    std::getline(in, line);
    if (line + "\n" != header) fail(ErrorCode::schema_mismatch, f.string() + " has an unexpected header");
    while (std::getline(in, line))
      if (!line.empty()) out += line + "\n";
  }
  return out;
}

std::string header_of(void (*writer)(std::ostream&)) {
  std::ostringstream s;
  writer(s);
  return s.str();
}

void cmd_report(Context& ctx) {
  const auto& root = ctx.layout.root;
  std::vector<fs::path> evals;
  for (const auto& p : sorted_entries(ctx.layout.evals_dir()))
    if (p.extension() == ".csv") evals.push_back(p);
  require(!evals.empty(), ErrorCode::missing_artifact,
          "missing artifact " + (ctx.layout.evals_dir() / "*.csv").string() + " (run eval first)");
  write_text(root / "eval_report.csv", merge_csv(evals, header_of(write_eval_csv_header)));
  ctx.wrote(root / "eval_report.csv");

  std::vector<fs::path> curves;
  std::vector<fs::path> supervision;
  std::vector<fs::path> method_dirs;
  for (const auto& p : sorted_entries(root)) {
    if (!fs::is_directory(p) || p == ctx.layout.sft_dir() || p == ctx.layout.evals_dir()) continue;
    if (fs::exists(p / "iteration_curve.csv")) curves.push_back(p / "iteration_curve.csv");
    if (fs::exists(p / "supervision_stats.csv")) supervision.push_back(p / "supervision_stats.csv");
    method_dirs.push_back(p);
  }
  write_text(root / "iteration_curve.csv", merge_csv(curves, header_of(write_curve_header)));
  write_text(root / "supervision_stats.csv", merge_csv(supervision, header_of(write_supervision_header)));
  ctx.wrote(root / "iteration_curve.csv");
  ctx.wrote(root / "supervision_stats.csv");

  // Error taxonomy over every stored preference dataset, per method.
  std::ostringstream errors;
  write_error_header(errors);
  std::optional<TaskIndex> tasks;
  for (const auto& mdir : method_dirs) {
    ErrorHistogram h;
    bool any = false;
    for (const auto& sdir : sorted_entries(mdir)) {
      if (!fs::is_directory(sdir)) continue;
      for (const auto& rdir : sorted_entries(sdir)) {
        const auto prefs = rdir / "prefs.jsonl";
        if (!fs::exists(prefs)) continue;
        if (!tasks) tasks.emplace(load_tasks(ctx.layout.tasks()));
        const auto part = categorize_errors(load_prefs(prefs, ctx.config.pair_mode), *tasks);
        for (int k = 0; k < kErrorCategories; ++k) h.counts[k] += part.counts[k];
        any = true;
      }
    }
    if (any) write_error_rows(errors, mdir.filename().string(), h);
  }
  write_text(root / "error_histogram.csv", errors.str());
  ctx.wrote(root / "error_histogram.csv");

  // Human-readable summary of the merged evaluation rows.
  std::ostringstream text;
  std::istringstream merged(read_text(root / "eval_report.csv"));
  std::string line;
  std::getline(merged, line);
  text << "method  round  level  rate\n";
  while (std::getline(merged, line)) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() >= 6) text << cols[0] << "  " << cols[1] << "  " << cols[2] << "  " << cols[5] << '\n';
  }
  write_text(root / "report.txt", text.str());
  ctx.wrote(root / "report.txt");
  ctx.summary["eval_files"] = evals.size();
  ctx.summary["methods"] = method_dirs.size();
}

void append_log(const fs::path& root, const std::string& command, bool ok, const std::string& detail) {
  fs::create_directories(root);
  std::ofstream log(root / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  log << stamp << ' ' << command << ' ' << (ok ? "ok" : "error") << (detail.empty() ? "" : " " + detail) << '\n';
}

}  // namespace

CommandResult run_command(const std::string& command, const RunConfig& config, const CommandOptions& options) {
  config.validate();
  Context ctx(config, options);
  using Handler = void (*)(Context&);
  static const std::map<std::string, Handler> handlers{
      {"gen-tasks", cmd_gen_tasks}, {"sft", cmd_sft},         {"collect", cmd_collect},
      {"scan", cmd_scan},           {"branch", cmd_branch},   {"build-prefs", cmd_build_prefs},
      {"train-dpo", cmd_train_dpo}, {"baseline", cmd_baseline}, {"iterate", cmd_iterate},
      {"eval", cmd_eval},           {"report", cmd_report}};
  const auto it = handlers.find(command);
  if (it == handlers.end()) fail(ErrorCode::invalid_argument, "unknown command '" + command + "'");
  try {
    it->second(ctx);
  } catch (const Error& e) {
    append_log(config.output_dir, command, false, e.what());
    throw;
  }
  append_log(config.output_dir, command, true, "");

  json out;
  out["command"] = command;
  out["status"] = "ok";
  out["output_dir"] = config.output_dir.string();
  json written = json::array();
  for (const auto& p : ctx.result.written) written.push_back(p.lexically_relative(config.output_dir).generic_string());
  out["written"] = written;
  out["warnings"] = ctx.result.warnings;
  out["details"] = ctx.summary;
  ctx.result.summary_json = out.dump();
  return std::move(ctx.result);
}

}  // namespace cso
