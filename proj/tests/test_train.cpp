#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cso/error.hpp"
#include "cso/train.hpp"
#include "fixtures.hpp"

using namespace cso;

namespace {

PolicyParameters random_params(std::uint64_t seed, double scale) {
  auto p = PolicyParameters::zeros(72, 64);
  RandomStream rng(seed);
  for (auto& w : p.weights) w = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

Trajectory play(const TaskSpec& task, const std::vector<int>& actions, const std::string& id) {
  Trajectory t;
  t.id = id;
  t.task_id = task.task_id;
  auto state = initial_state(task);
  for (int a : actions) {
    REQUIRE_FALSE(state.terminal);
    const auto digest = state_digest(state);
    auto next = transition(task, state, a);
    t.steps.push_back({digest, a, next.observation});
    state = next.state;
  }
  REQUIRE(state.terminal);
  t.end = task.vocabulary().is_answer(actions.back()) ? EndReason::answer : EndReason::horizon;
  t.outcome = verify_outcome(task, t);
  return t;
}

/// A pair at a random reachable state of a random task.
PreferencePair random_pair(std::uint64_t seed) {
  const auto task = generate_tasks(1, DifficultyMix{}, WorldConfig{}, seed)[0];
  RandomStream rng(seed * 31 + 7);
  auto state = initial_state(task);
  const int steps = rng.uniform_int(3);
  for (int i = 0; i < steps; ++i) state = transition(task, state, rng.uniform_int(64)).state;
  PreferencePair p;
  p.state_context = encode_state_context(task.query, state.history);
  p.chosen = rng.uniform_int(72);
  do p.rejected = rng.uniform_int(72);
  while (p.rejected == p.chosen);
  p.provenance.task_id = task.task_id;
  return p;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

double batch_loss(const PolicyParameters& params, const PolicyParameters& ref, const Featurizer& fz,
                  const std::vector<PreferencePair>& batch, double beta) {
  double s = 0.0;
  for (const auto& p : batch) s += dpo_pair_loss(params, ref, fz, p, beta);
  return s / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("DPO anchors: ln 2 at params = ref and the softplus identity") {
  const auto fz = fixtures::featurizer();
  for (std::uint64_t s = 0; s < 25; ++s) {
    const auto p = random_params(s, 1.0);
    CHECK(std::abs(dpo_pair_loss(p, p, fz, random_pair(s), 0.5) - std::numbers::ln2) < 1e-12);
  }
  RandomStream rng(3);
  for (int i = 0; i < 100; ++i) {
    const double x = 80.0 * rng.uniform() - 40.0;
    // -log sigma(x) + log sigma(-x) = -x
    CHECK(std::abs(softplus(-x) - softplus(x) + x) < 1e-10);
  }
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(std::isfinite(softplus(-800.0)));
}

TEST_CASE("DPO loss at constructed margins") {
  CHECK(dpo_loss_from_margin(0.5, 2.0) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(dpo_loss_from_margin(0.5, -2.0) == doctest::Approx(1.313262).epsilon(1e-6));
  CHECK(dpo_loss_from_margin(0.5, -2.0) - dpo_loss_from_margin(0.5, 2.0) == doctest::Approx(1.0).epsilon(1e-12));

  // Margin 2 through the full pair path: chosen logit +1, rejected -1.
  const auto fz = fixtures::featurizer();
  const auto pair = random_pair(11);
  const auto ref = PolicyParameters::zeros(72, 64);
  const auto ctx = decode_state_context(pair.state_context);
  const auto f = fz(ctx.query, ctx.history);
  auto params = ref;
  params.at(pair.chosen, 0) = 1.0 / f[0];
  params.at(pair.rejected, 0) = -1.0 / f[0];
  CHECK(dpo_pair_loss(params, ref, fz, pair, 0.5) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(dpo_pair_loss(ref, params, fz, pair, 0.5) == doctest::Approx(1.313262).epsilon(1e-6));

  auto same = pair;
  same.rejected = same.chosen;
  CHECK_THROWS_AS(dpo_pair_loss(params, ref, fz, same, 0.5), Error);
}

TEST_CASE("DPO loss is invariant to a per-state logit shift in both params and ref") {
  const auto fz = fixtures::featurizer();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto pair = random_pair(s + 50);
    const auto ctx = decode_state_context(pair.state_context);
    const auto f = fz(ctx.query, ctx.history);
    auto p = random_params(s, 0.7), r = random_params(s + 1000, 0.7);
    const double before = dpo_pair_loss(p, r, fz, pair, 0.5);
    for (int a = 0; a < 72; ++a) {
      p.at(a, 0) += 2.5 / f[0];
      r.at(a, 0) -= 1.5 / f[0];
    }
    CHECK(dpo_pair_loss(p, r, fz, pair, 0.5) == doctest::Approx(before).epsilon(1e-10));
  }
}

TEST_CASE("DPO gradient matches central finite differences") {
  const auto fz = fixtures::featurizer();
  const double h = 1e-5;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto ref = random_params(s + 500, 0.4);
    auto params = random_params(s, 0.4);
    std::vector<PreferencePair> batch{random_pair(s), random_pair(s + 77)};
    const auto grad = dpo_gradient(params, ref, fz, batch, 0.5);
    RandomStream pick(s);
    double worst = 0.0;
    for (int c = 0; c < 16; ++c) {
      const auto& p = batch[static_cast<std::size_t>(c % 2)];
      const int row = c < 8 ? (c % 4 < 2 ? p.chosen : p.rejected) : pick.uniform_int(72);
      const int col = pick.uniform_int(64);
      const auto k = static_cast<std::size_t>(row) * 64 + static_cast<std::size_t>(col);
      const double w = params.weights[k];
      params.weights[k] = w + h;
      const double up = batch_loss(params, ref, fz, batch, 0.5);
      params.weights[k] = w - h;
      const double down = batch_loss(params, ref, fz, batch, 0.5);
      params.weights[k] = w;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) < 1e-8 && std::abs(grad[k]) < 1e-8) continue;
      worst = std::max(worst, relative_error(fd, grad[k]));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("DPO gradient: duplicates, beta scaling, descent direction, workers") {
  const auto fz = fixtures::featurizer();
  const auto ref = random_params(1, 0.3);
  const auto pair = random_pair(4);
  const auto single = dpo_gradient(ref, ref, fz, {pair}, 0.5);
  const auto quad = dpo_gradient(ref, ref, fz, {pair, pair, pair, pair}, 0.5);
  for (std::size_t k = 0; k < single.size(); ++k) CHECK(quad[k] == doctest::Approx(single[k]).epsilon(1e-12));
  const auto doubled = dpo_gradient(ref, ref, fz, {pair}, 1.0);
  for (std::size_t k = 0; k < single.size(); ++k) CHECK(doubled[k] == doctest::Approx(2.0 * single[k]).epsilon(1e-12));

  // Increasing the chosen logit along its own feature direction lowers the loss.
  const auto ctx = decode_state_context(pair.state_context);
  const auto f = fz(ctx.query, ctx.history);
  double directional = 0.0;
  for (int j = 0; j < 64; ++j) directional += single[static_cast<std::size_t>(pair.chosen) * 64 + j] * f[static_cast<std::size_t>(j)];
  CHECK(directional < 0.0);

  std::vector<PreferencePair> many;
  for (std::uint64_t s = 0; s < 70; ++s) many.push_back(random_pair(s + 900));
  const auto params = random_params(2, 0.3);
  CHECK(dpo_gradient(params, ref, fz, many, 0.5, 1) == dpo_gradient(params, ref, fz, many, 0.5, 4));
  CHECK_THROWS_AS(dpo_gradient(params, ref, fz, {}, 0.5), Error);
}

TEST_CASE("train_dpo: zero epochs, margin growth, monotone loss, determinism") {
  const auto fz = fixtures::featurizer();
  const auto ref = random_params(8, 0.2);
  PreferenceDataset data;
  for (std::uint64_t s = 0; s < 30; ++s) data.add(random_pair(s + 300));

  const auto none = train_dpo(ref, ref, fz, data, {0.5, 0.05, 0, 1});
  CHECK(none.params == ref);

  const DpoConfig cfg{0.5, 1.0, 60, 1};
  const auto trained = train_dpo(ref, ref, fz, data, cfg);
  CHECK(trained.params.version == ref.version + 60);
  REQUIRE(trained.metrics.size() == 60);
  CHECK(trained.metrics[0].mean_loss == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  for (std::size_t e = 1; e < trained.metrics.size(); ++e)
    CHECK(trained.metrics[e].mean_loss <= trained.metrics[e - 1].mean_loss + 1e-6);
  CHECK(train_dpo(ref, ref, fz, data, cfg).params == trained.params);
  auto parallel = cfg;
  parallel.workers = 3;
  CHECK(train_dpo(ref, ref, fz, data, parallel).params == trained.params);

  PreferenceDataset one;
  one.add(random_pair(5));
  const auto& p = one.pairs()[0];
  const auto ctx = decode_state_context(p.state_context);
  const auto f = fz(ctx.query, ctx.history);
  const auto fit = train_dpo(ref, ref, fz, one, {0.5, 0.5, 200, 1}).params;
  CHECK(log_prob(fit, f, p.chosen) - log_prob(fit, f, p.rejected) >
        log_prob(ref, f, p.chosen) - log_prob(ref, f, p.rejected));

  CHECK_THROWS_AS(train_dpo(ref, ref, fz, PreferenceDataset{}, cfg), Error);
  CHECK_THROWS_AS(DpoConfig({0.0, 0.1, 1, 1}).validate(), Error);
}

TEST_CASE("epoch metrics CSV has a stable header") {
  std::ostringstream out;
  write_epoch_metrics(out, {{0, 0.5, 0.1, 2.0}});
  CHECK(out.str().rfind("epoch,mean_loss,mean_margin,grad_norm\n", 0) == 0);
}

TEST_CASE("baselines: eto, ipr, step_dpo counting contracts") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 17)[0];
  const TaskIndex tasks({task});
  const auto vocab = task.vocabulary();
  auto state = initial_state(task);
  const int o1 = oracle_action(task, state);
  state = transition(task, state, o1).state;
  const int o2 = oracle_action(task, state);
  const int ans = vocab.answer(task.target_answer);
  // Two invocations that never advance and differ from each other.
  std::vector<int> wrong;
  for (int a = 0; a < 64 && wrong.size() < 2; ++a)
    if (a != o1 && a != o2 && classify_step(task, initial_state(task), a) == StepEffect::no_op) wrong.push_back(a);
  REQUIRE(wrong.size() == 2);

  const auto expert = play(task, {wrong[0], o1, o2, ans}, "e");
  REQUIRE(expert.outcome == 1);
  REQUIRE(expert.length() == 4);
  const auto failed_traj = play(task, std::vector<int>(6, wrong[1]), "f");
  REQUIRE(failed_traj.outcome == 0);
  REQUIRE(failed_traj.length() == 6);
  FailedTrajectorySet failed;
  failed.round_index = 1;
  failed.add(failed_traj);
  const std::vector<Trajectory> experts{expert};

  BaselineInputs in;
  in.tasks = &tasks;
  in.failed = &failed;
  in.expert_rollouts = &experts;
  in.round = 1;
  const auto eto = build_baseline_dataset(BaselineKind::eto, in);
  CHECK(eto.trajectories.size() == 1);
  const auto ipr = build_baseline_dataset(BaselineKind::ipr, in);
  CHECK(ipr.steps.size() == 4);

  // ETO margin sums per-step log-ratios before the logistic.
  const auto fz = fixtures::featurizer();
  const auto ref = random_params(3, 0.2);
  const auto params = random_params(4, 0.2);
  const auto ex = compile_trajectory_pairs(ref, fz, tasks, eto.trajectories);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].terms.size() == 10);
  double manual = 0.0;
  for (const auto* t : {&expert, &failed_traj}) {
    const double sign = t == &expert ? 1.0 : -1.0;
    auto s = initial_state(task);
    for (const auto& step : t->steps) {
      const auto f = fz(task, s);
      manual += sign * (log_prob(params, f, step.action) - log_prob(ref, f, step.action));
      s = transition(task, s, step.action).state;
    }
  }
  CHECK(example_margin(params, ex[0]) == doctest::Approx(manual).epsilon(1e-12));

  // Step-DPO: at most one pair per scanned step.
  const ProcessRewardModel prm{PrmConfig{}};
  ScanConfig sc;
  const auto scan = scan_steps(failed, params, fz, tasks, sc, prm, 3, 1);
  CHECK(scan.size() == 6);
  in.scan = &scan;
  const auto sd = build_baseline_dataset(BaselineKind::step_dpo, in);
  CHECK(sd.steps.size() <= 6);
  CHECK(sd.steps.size() >= 1);

  BaselineInputs missing;
  missing.tasks = &tasks;
  CHECK_THROWS_AS(build_baseline_dataset(BaselineKind::eto, missing), Error);
  CHECK_THROWS_AS(build_baseline_dataset(BaselineKind::step_dpo, missing), Error);
  CHECK_THROWS_AS(build_baseline_dataset(BaselineKind::rft, missing), Error);
  CHECK(parse_baseline("ipr") == BaselineKind::ipr);
  CHECK_THROWS_AS(parse_baseline("ppo"), Error);
}

TEST_CASE("iterate: bookkeeping, reference chaining, empty rounds") {
  const auto tasks = generate_tasks(24, DifficultyMix{}, WorldConfig{}, 404);
  const TaskIndex index(tasks);
  const auto fz = fixtures::featurizer();
  const auto& sft = fixtures::small_sft_policy();
  const ProcessRewardModel prm{PrmConfig{}};
  RoundConfig rc;
  IterationConfig ic;
  ic.dpo = {0.5, 0.5, 30, 1};

  ic.rounds = 1;
  const auto one = iterate_cso(sft, fz, index, rc, ic, prm, 3);
  CHECK(one.history.size() == 2);
  CHECK(one.round == 1);

  ic.rounds = 2;
  int evaluated = 0;
  const auto two = iterate_cso(sft, fz, index, rc, ic, prm, 3, [&](const PolicyParameters&, int r) {
    CHECK(r == evaluated++);
    return 0.0;
  });
  REQUIRE(two.history.size() == 3);
  CHECK(two.eval_success.size() == 3);
  CHECK(two.history[0].params() == sft);
  for (std::size_t i = 1; i <= 2; ++i) CHECK(two.refs[i - 1] == two.history[i - 1].params());
  CHECK(two.refs[1] == one.history[1].params());

  RoundConfig empty = rc;
  empty.scan.thresholds = {0.0, 0.65};
  const auto carried = iterate_cso(sft, fz, index, empty, ic, prm, 3);
  CHECK(carried.history.size() == 3);
  for (const auto& snap : carried.history) CHECK(snap.params() == sft);
  for (const auto& rec : carried.rounds) {
    CHECK(rec.carried_forward);
    CHECK_FALSE(rec.warnings.empty());
  }
}

TEST_CASE("iterate: every baseline kind runs a round") {
  const auto tasks = generate_tasks(16, DifficultyMix{}, WorldConfig{}, 405);
  const TaskIndex index(tasks);
  const auto fz = fixtures::featurizer();
  const ProcessRewardModel prm{PrmConfig{}};
  IterationConfig ic;
  ic.rounds = 1;
  ic.dpo = {0.5, 0.5, 10, 1};
  for (auto kind : {BaselineKind::eto, BaselineKind::rft, BaselineKind::step_dpo, BaselineKind::ipr}) {
    MethodSpec m;
    m.kind = MethodSpec::Kind::baseline;
    m.baseline = kind;
    m.label = baseline_name(kind);
    const auto st = iterate(fixtures::small_sft_policy(), fz, index, m, ic, prm, 2);
    CHECK(st.history.size() == 2);
    INFO(m.label);
    // A weak policy may have no successes for rft; then the round carries forward.
    CHECK(st.rounds[0].carried_forward == (st.rounds[0].examples == 0));
    CHECK((st.history[1].params() == st.history[0].params()) == st.rounds[0].carried_forward);
    if (kind != BaselineKind::rft) CHECK(st.rounds[0].examples > 0);
  }
}

TEST_CASE("bon_select: degenerate k, oracle pick, determinism") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L2), WorldConfig{}, 6)[0];
  const auto state = initial_state(task);
  const auto fz = fixtures::featurizer();
  const ProcessRewardModel prm{PrmConfig{}};
  const auto params = random_params(5, 0.5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    RandomStream a(s), b(s);
    CHECK(bon_select(params, fz, prm, task, state, 1, a) == sample_action(params, fz(task, state), b));
  }
  // A policy that puts most mass on the oracle: it is among 5 candidates and wins.
  auto peaked = PolicyParameters::zeros(72, 64);
  const auto f = fz(task, state);
  const int oracle = oracle_action(task, state);
  peaked.at(oracle, 0) = 3.0 / f[0];
  int chosen_oracle = 0, had_oracle = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    RandomStream probe(s);
    bool present = false;
    for (int j = 0; j < 5; ++j) present |= sample_action(peaked, f, probe) == oracle;
    RandomStream rng(s);
    const int pick = bon_select(peaked, fz, prm, task, state, 5, rng);
    if (present) {
      ++had_oracle;
      chosen_oracle += pick == oracle;
    }
    RandomStream again(s);
    CHECK(bon_select(peaked, fz, prm, task, state, 5, again) == pick);
  }
  CHECK(had_oracle > 0);
  CHECK(chosen_oracle == had_oracle);
  RandomStream rng(0);
  CHECK_THROWS_AS(bon_select(params, fz, prm, task, state, 0, rng), Error);
}
