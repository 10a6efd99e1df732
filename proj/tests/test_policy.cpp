#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cso/error.hpp"
#include "cso/policy.hpp"
#include "fixtures.hpp"

using namespace cso;

namespace {

PolicyParameters random_params(std::uint64_t seed, double scale = 0.5) {
  auto p = PolicyParameters::zeros(72, 64);
  RandomStream rng(seed);
  for (auto& w : p.weights) w = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

FeatureVector some_features(std::uint64_t seed) {
  const auto task = generate_tasks(1, DifficultyMix{}, WorldConfig{}, seed)[0];
  auto state = initial_state(task);
  RandomStream rng(seed);
  for (int i = 0; i < 2 && !state.terminal; ++i) state = transition(task, state, rng.uniform_int(64)).state;
  return fixtures::featurizer()(task, state);
}

}  // namespace

TEST_CASE("featurizer is deterministic and unit norm") {
  const auto f = some_features(3);
  CHECK(f.size() == 64);
  double norm = 0.0;
  for (double v : f) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(some_features(3) == f);
}

TEST_CASE("log_prob: zero weights are uniform") {
  const auto p = PolicyParameters::zeros(72, 64);
  const auto f = some_features(1);
  for (int a : {0, 17, 71}) CHECK(log_prob(p, f, a) == doctest::Approx(std::log(1.0 / 72)).epsilon(1e-12));
  CHECK(log_prob(p, f, 0) == doctest::Approx(-4.276666).epsilon(1e-6));
}

TEST_CASE("log_prob: normalization and shift invariance on random params") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = random_params(s, 2.0);
    const auto f = some_features(s + 100);
    double total = 0.0;
    for (int a = 0; a < 72; ++a) total += std::exp(log_prob(p, f, a));
    CHECK(std::abs(total - 1.0) < 1e-9);
    // Adding c to every action's logit: shift the bias weight of every row
    // by c / f[0] (the bias feature is nonzero).
    REQUIRE(f[0] != 0.0);
    auto shifted = p;
    for (int a = 0; a < 72; ++a) shifted.at(a, 0) += 3.7 / f[0];
    for (int a : {0, 5, 70}) CHECK(std::abs(log_prob(shifted, f, a) - log_prob(p, f, a)) < 1e-9);
  }
}

TEST_CASE("log_prob rejects non-finite weights") {
  auto p = PolicyParameters::zeros(72, 64);
  p.weights[5] = std::nan("");
  CHECK_THROWS_AS(check_finite(p), Error);
  CHECK_THROWS_AS(log_prob(p, some_features(1), 0), Error);
}

TEST_CASE("sample_action: uniform frequencies, degenerate softmax, determinism") {
  const auto f = some_features(2);
  {
    const auto p = PolicyParameters::zeros(72, 64);
    RandomStream rng(99);
    std::vector<int> counts(72, 0);
    for (int i = 0; i < 72000; ++i) counts[static_cast<std::size_t>(sample_action(p, f, rng))]++;
    for (int c : counts) {
      CHECK(c / 72000.0 >= 1.0 / 72 - 0.01);
      CHECK(c / 72000.0 <= 1.0 / 72 + 0.01);
    }
    CHECK(rng.draws() == 72000);
  }
  {
    auto p = PolicyParameters::zeros(72, 64);
    // Logit of action 9 is +50: put the whole weight on the bias feature.
    p.at(9, 0) = 50.0 / f[0];
    RandomStream rng(5);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += sample_action(p, f, rng) == 9;
    CHECK(hits >= 9990);
  }
  const auto p = random_params(4);
  RandomStream a(17), b(17);
  for (int i = 0; i < 200; ++i) CHECK(sample_action(p, f, a) == sample_action(p, f, b));
}

TEST_CASE("expert_action: epsilon extremes and Monte Carlo agreement") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L2), WorldConfig{}, 8)[0];
  const auto state = initial_state(task);
  const int oracle = oracle_action(task, state);
  RandomStream rng(1);
  for (int i = 0; i < 500; ++i) CHECK(expert_action(task, state, 0.0, rng) == oracle);
  for (int i = 0; i < 500; ++i) {
    const int a = expert_action(task, state, 1.0, rng);
    CHECK(a != oracle);
    CHECK(a >= 0);
    CHECK(a < 72);
  }
  int agree = 0;
  for (int i = 0; i < 10000; ++i) agree += expert_action(task, state, 0.2, rng) == oracle;
  CHECK(agree / 10000.0 == doctest::Approx(0.8).epsilon(0.025));
  CHECK_THROWS_AS(expert_action(task, state, 1.5, rng), Error);
}

TEST_CASE("expert rollouts beat uniform rollouts") {
  const auto tasks = generate_tasks(100, DifficultyMix{}, WorldConfig{}, 55);
  const auto fz = fixtures::featurizer();
  const auto zero = PolicyParameters::zeros(72, 64);
  int expert = 0, uniform = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    expert += rollout(zero, fz, tasks[i], 1000 + i, {Actor::expert, 0.05}).outcome;
    uniform += rollout(zero, fz, tasks[i], 1000 + i).outcome;
  }
  CHECK(expert > uniform);
  CHECK(expert >= 70);
}

TEST_CASE("rollout records a replayable rng trace") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L3), WorldConfig{}, 12)[0];
  const auto fz = fixtures::featurizer();
  const auto p = random_params(3);
  const auto t = rollout(p, fz, task, 444);
  CHECK(t.rng_trace.seed == 444);
  CHECK(t.rng_trace.draws == static_cast<std::uint64_t>(t.length()));
  CHECK(rollout(p, fz, task, 444) == t);
  CHECK(t.length() <= task.horizon());
  CHECK(t.outcome == verify_outcome(task, t));
}

namespace {

DemoDataset three_step_demo() {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 31)[0];
  DemoDataset demos;
  demos.add(task, fixtures::oracle_rollout(task));
  return demos;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace

TEST_CASE("SFT gradient matches central finite differences") {
  const auto fz = fixtures::featurizer();
  const auto demos = three_step_demo();
  REQUIRE(demos.items()[0].trajectory.length() == 3);
  const double h = 1e-5;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto p = random_params(s + 7, 0.3);
    const auto grad = sft_gradient(p, fz, demos);
    RandomStream pick(s);
    double worst = 0.0;
    // Coordinates touched by the demo (action rows x active features) plus random ones.
    for (int c = 0; c < 12; ++c) {
      const auto& step = demos.items()[0].trajectory.steps[static_cast<std::size_t>(c % 3)];
      const int row = c < 6 ? step.action : pick.uniform_int(72);
      const int col = c % 2 == 0 ? 0 : pick.uniform_int(64);
      const auto k = static_cast<std::size_t>(row) * 64 + static_cast<std::size_t>(col);
      const double w = p.weights[k];
      p.weights[k] = w + h;
      const double up = sft_loss(p, fz, demos);
      p.weights[k] = w - h;
      const double down = sft_loss(p, fz, demos);
      p.weights[k] = w;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) < 1e-7 && std::abs(grad[k]) < 1e-7) continue;
      worst = std::max(worst, relative_error(fd, grad[k]));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("sft_train: zero epochs, monotone loss, single-example MLE") {
  const auto fz = fixtures::featurizer();
  const auto zero = PolicyParameters::zeros(72, 64);
  const auto demos = three_step_demo();
  const auto none = sft_train(zero, fz, demos, {0.1, 0, 1});
  CHECK(none.params == zero);

  const auto trained = sft_train(zero, fz, demos, {0.5, 200, 1});
  for (std::size_t e = 1; e < trained.loss_history.size(); ++e)
    CHECK(trained.loss_history[e] <= trained.loss_history[e - 1] + 1e-6);
  CHECK(trained.params.version == 200);

  // One 1-step trajectory: answer immediately.
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L1), WorldConfig{}, 31)[0];
  const auto s0 = initial_state(task);
  const int a = task.vocabulary().answer(task.target_answer);
  Trajectory t;
  t.task_id = task.task_id;
  t.steps.push_back({state_digest(s0), a, transition(task, s0, a).observation});
  t.outcome = verify_outcome(task, t);
  DemoDataset one;
  one.add(task, t);
  const auto fit = sft_train(zero, fz, one, {0.5, 100, 1});
  CHECK(log_prob(fit.params, fz(task, s0), a) > std::log(0.5));

  CHECK_THROWS_AS(sft_train(zero, fz, DemoDataset{}, {0.1, 1, 1}), Error);
}

TEST_CASE("parameter files round trip and reject corruption") {
  const auto dir = fixtures::scratch_dir("params");
  const auto p = random_params(9);
  save_parameters(dir / "p.bin", PolicySnapshot(p, 2, "unit"));
  const auto back = load_parameters(dir / "p.bin");
  CHECK(back.params().weights == p.weights);
  CHECK(back.round() == 2);
  CHECK(back.producer() == "unit");
  CHECK(std::filesystem::exists(dir / "p.bin.json"));
  {
    std::fstream f(dir / "p.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_parameters(dir / "p.bin"), Error);
  CHECK_THROWS_AS(load_parameters(dir / "missing.bin"), Error);
}
