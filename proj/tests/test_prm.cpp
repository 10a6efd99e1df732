#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cso/error.hpp"
#include "cso/prm.hpp"
#include "fixtures.hpp"

using namespace cso;

namespace {

PrmScore score_eta0(const TaskSpec& task, const WorldState& state, int action) {
  RandomStream rng(1);
  const auto s = rubric_score(task, state, action, RubricConfig{}, rng);
  CHECK(rng.draws() == 0);
  return s;
}

/// Brute-force threshold scan, independent of select_candidates' loop structure.
std::vector<int> brute_force(const std::vector<double>& policy, const std::vector<std::vector<double>>& alts,
                             double lo, double hi) {
  std::vector<int> out;
  for (std::size_t t = 0; t < policy.size(); ++t) {
    const bool low = policy[t] < lo;
    const bool any_high = std::any_of(alts[t].begin(), alts[t].end(), [&](double v) { return v > hi; });
    if (low && any_high) out.push_back(static_cast<int>(t) + 1);
  }
  return out;
}

Trajectory failed_of_length(int n) {
  Trajectory t;
  t.id = "t";
  t.task_id = "task";
  t.outcome = 0;
  for (int i = 0; i < n; ++i) t.steps.push_back({static_cast<std::uint64_t>(i), i, {}});
  return t;
}

}  // namespace

TEST_CASE("rubric: oracle scores 1 and correctness alone is 0.35") {
  for (const auto& task : generate_tasks(20, DifficultyMix{}, WorldConfig{}, 77)) {
    auto state = initial_state(task);
    while (!state.terminal) {
      const int a = oracle_action(task, state);
      CHECK(score_eta0(task, state, a).value == doctest::Approx(1.0).epsilon(1e-12));
      state = transition(task, state, a).state;
    }
  }
  DimensionScores only_correct;
  only_correct.correctness = 1.0;
  CHECK(combine(only_correct, RubricWeights{}) == doctest::Approx(0.35).epsilon(1e-12));
}

TEST_CASE("rubric weights must sum to one") {
  RubricWeights w;
  w.thought = 0.2;
  CHECK_THROWS_AS(w.validate(), Error);
  RubricConfig c;
  c.weights = w;
  RandomStream rng(1);
  const auto task = generate_tasks(1, DifficultyMix{}, WorldConfig{}, 1)[0];
  CHECK_THROWS_AS(rubric_score(task, initial_state(task), 0, c, rng), Error);
}

TEST_CASE("rubric: oracle outranks the distractor at every planted step") {
  int checked = 0;
  for (const auto& task : generate_tasks(100, DifficultyMix{}, WorldConfig{}, 19)) {
    auto state = initial_state(task);
    while (state.progress <= task.length()) {
      if (auto d = distractor_action(task, state)) {
        CHECK(score_eta0(task, state, oracle_action(task, state)).value > score_eta0(task, state, *d).value);
        ++checked;
      }
      state = transition(task, state, oracle_action(task, state)).state;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("rubric: noisy scores stay in range and are reproducible") {
  const auto task = generate_tasks(1, fixtures::only(Difficulty::L2), WorldConfig{}, 3)[0];
  const auto state = initial_state(task);
  for (auto model : {NoiseModel::uniform, NoiseModel::gaussian}) {
    for (double eta : {0.1, 0.4, 5.0, 100.0}) {
      RubricConfig c;
      c.noise_eta = eta;
      c.noise = model;
      RandomStream rng(eta * 10), again(eta * 10);
      for (int a = 0; a < 72; ++a) {
        const auto s = rubric_score(task, state, a, c, rng);
        CHECK(s.value >= 0.0);
        CHECK(s.value <= 1.0);
        CHECK(rubric_score(task, state, a, c, again).value == s.value);
      }
    }
  }
}

TEST_CASE("select_candidates: worked examples") {
  const SelectionThresholds th;
  auto t = failed_of_length(3);
  const std::vector<PrmScore> policy{{0.40}, {0.50}, {0.10}};
  const std::vector<std::vector<ScoredAlternative>> alts{
      {{1, {0.70}, 1}, {2, {0.30}, 2}}, {{1, {0.99}, 1}}, {{1, {0.60}, 1}}};
  const auto c = select_candidates(t, policy, alts, th);
  REQUIRE(c.size() == 1);
  CHECK(c[0].step_index == 1);
  CHECK(c[0].alternatives.size() == 2);

  CHECK(select_candidates(t, policy, alts, {0.0, 0.65}).empty());
  CHECK_THROWS_AS(select_candidates(t, {{0.1}}, alts, th), Error);
  t.outcome = 1;
  CHECK_THROWS_AS(select_candidates(t, policy, alts, th), Error);
  CHECK_THROWS_AS(SelectionThresholds({0.7, 0.6}).validate(), Error);
}

TEST_CASE("select_candidates equals a brute-force scan and is monotone in thresholds") {
  RandomStream rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + rng.uniform_int(8);
    std::vector<double> pv;
    std::vector<std::vector<double>> av;
    std::vector<PrmScore> policy;
    std::vector<std::vector<ScoredAlternative>> alts;
    for (int t = 0; t < n; ++t) {
      pv.push_back(std::round(rng.uniform() * 20) / 20);
      policy.push_back({pv.back()});
      av.emplace_back();
      alts.emplace_back();
      const int k = rng.uniform_int(6);
      for (int j = 0; j < k; ++j) {
        av.back().push_back(std::round(rng.uniform() * 20) / 20);
        alts.back().push_back({j, {av.back().back()}, j + 1});
      }
    }
    const auto traj = failed_of_length(n);
    const double lo = 0.45, hi = 0.65;
    const auto got = select_candidates(traj, policy, alts, {lo, hi});
    std::vector<int> steps;
    for (const auto& c : got) steps.push_back(c.step_index);
    CHECK(steps == brute_force(pv, av, lo, hi));
    CHECK(std::is_sorted(steps.begin(), steps.end()));
    CHECK(select_candidates(traj, policy, alts, {0.55, hi}).size() >= got.size());
    CHECK(select_candidates(traj, policy, alts, {lo, 0.8}).size() <= got.size());
  }
}

// ---- remote scorer against a local stub ----

namespace {

struct StubServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/score", handler);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/score"; }
};

RemoteConfig remote(const std::string& url, int retries = 3, int timeout_ms = 2000) {
  RemoteConfig c;
  c.endpoint = url;
  c.retry_budget = retries;
  c.timeout = std::chrono::milliseconds(timeout_ms);
  c.backoff_base = std::chrono::milliseconds(5);
  return c;
}

}  // namespace

TEST_CASE("remote scorer: echo, clamp, payload shape") {
  nlohmann::json seen;
  std::string reply = R"({"score": 0.7})";
  StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(reply, "application/json");
  });
  RemoteScorer scorer(remote(stub.url()), RubricWeights{});
  const auto s = scorer.score("state text", "action text");
  CHECK(s.value == doctest::Approx(0.7));
  CHECK(s.source == ScoreSource::remote);
  CHECK_FALSE(s.clamped);
  CHECK(seen["schema"] == 1);
  CHECK(seen["state"] == "state text");
  CHECK(seen["action"] == "action text");
  CHECK(seen["rubric_prompt"].get<std::string>().find("35%") != std::string::npos);

  reply = R"({"score": 1.4})";
  const auto c = scorer.score("s", "a");
  CHECK(c.value == 1.0);
  CHECK(c.clamped);
  CHECK(scorer.clamp_warnings() == 1);

  reply = R"({"value": 0.3})";
  CHECK_THROWS_WITH_AS(scorer.score("s", "a"), doctest::Contains("malformed"), Error);
  reply = R"({"score": "high"})";
  CHECK_THROWS_AS(scorer.score("s", "a"), Error);
  reply = "not json";
  CHECK_THROWS_AS(scorer.score("s", "a"), Error);
  CHECK_THROWS_AS(scorer.score("", "a"), Error);
}

TEST_CASE("remote scorer: retries then succeeds; exhausting the budget fails") {
  std::atomic<int> calls{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    if (calls.fetch_add(1) < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"score": 0.25})", "application/json");
  });
  RemoteScorer ok(remote(stub.url(), 3), RubricWeights{});
  CHECK(ok.score("s", "a").value == doctest::Approx(0.25));
  CHECK(calls.load() == 3);

  calls = 0;
  RemoteScorer short_budget(remote(stub.url(), 2), RubricWeights{});
  try {
    short_budget.score("s", "a");
    FAIL("expected a network error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::network);
  }
}

TEST_CASE("remote scorer: client errors are not retried and timeouts are distinct") {
  std::atomic<int> calls{0};
  StubServer bad([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  RemoteScorer scorer(remote(bad.url(), 3), RubricWeights{});
  CHECK_THROWS_AS(scorer.score("s", "a"), Error);
  CHECK(calls.load() == 1);

  StubServer slow([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(R"({"score": 0.5})", "application/json");
  });
  RemoteScorer impatient(remote(slow.url(), 1, 100), RubricWeights{});
  try {
    impatient.score("s", "a");
    FAIL("expected a timeout");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::timeout);
  }
}

TEST_CASE("PRM in remote mode scores through the endpoint") {
  StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const bool has_history = body["state"].get<std::string>().find("step") != std::string::npos;
    res.set_content(has_history ? R"({"score": 0.9})" : R"({"score": 0.1})", "application/json");
  });
  PrmConfig c;
  c.mode = PrmConfig::Mode::remote;
  c.remote = remote(stub.url());
  const ProcessRewardModel prm(c);
  const auto task = generate_tasks(1, DifficultyMix{}, WorldConfig{}, 2)[0];
  RandomStream rng(0);
  const auto s = prm.score(task, initial_state(task), 0, rng);
  CHECK(s.source == ScoreSource::remote);
  CHECK(s.value == doctest::Approx(0.9));
  CHECK(rng.draws() == 0);

  RemoteConfig unreachable = remote("http://127.0.0.1:1/score", 1, 200);
  RemoteScorer down(unreachable, RubricWeights{});
  CHECK_THROWS_AS(down.score("s", "a"), Error);
}
