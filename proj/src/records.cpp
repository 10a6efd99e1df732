#include "cso/records.hpp"

#include <json.hpp>

namespace cso {

namespace {

using nlohmann::json;

constexpr int kRecordSchema = 1;

json score_json(const PrmScore& s) {
  return {{"value", s.value}, {"source", s.source == ScoreSource::remote ? "remote" : "rubric"}, {"clamped", s.clamped}};
}

PrmScore score_from(const json& j) {
  return {j.at("value").get<double>(),
          j.at("source").get<std::string>() == "remote" ? ScoreSource::remote : ScoreSource::rubric,
          j.at("clamped").get<bool>()};
}

json alternative_json(const ScoredAlternative& a) {
  return {{"j", a.sample_index}, {"action", a.action}, {"score", score_json(a.score)}};
}

ScoredAlternative alternative_from(const json& j) {
  return {j.at("action").get<int>(), score_from(j.at("score")), j.at("j").get<int>()};
}

json candidate_json(const CandidateCriticalStep& c) {
  json alts = json::array();
  for (const auto& a : c.alternatives) alts.push_back(alternative_json(a));
  return {{"schema", kRecordSchema},
          {"trajectory_id", c.trajectory_id},
          {"step", c.step_index},
          {"policy_action", c.policy_action},
          {"policy_score", score_json(c.policy_score)},
          {"alternatives", alts},
          {"state_digest", c.state_digest}};
}

CandidateCriticalStep candidate_from(const json& j) {
  CandidateCriticalStep c;
  c.trajectory_id = j.at("trajectory_id").get<std::string>();
  c.step_index = j.at("step").get<int>();
  c.policy_action = j.at("policy_action").get<int>();
  c.policy_score = score_from(j.at("policy_score"));
  for (const auto& a : j.at("alternatives")) c.alternatives.push_back(alternative_from(a));
  c.state_digest = j.at("state_digest").get<std::uint64_t>();
  return c;
}

template <typename Fn>
auto parse_record(const std::string& line, const char* what, Fn&& body) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("malformed ") + what + " record: " + e.what());
  }
  if (j.value("schema", -1) != kRecordSchema)
    fail(ErrorCode::schema_mismatch, std::string(what) + " record schema mismatch, expected " +
                                         std::to_string(kRecordSchema));
  try {
    return body(j);
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("malformed ") + what + " record: " + e.what());
  }
}

}  // namespace

std::string scored_step_to_json_line(const ScoredStep& s) {
  json j = candidate_json(s.as_candidate());
  j["trajectory_index"] = s.trajectory_index;
  j["task_id"] = s.task_id;
  return j.dump();
}

ScoredStep scored_step_from_json_line(const std::string& line) {
  return parse_record(line, "scan", [](const json& j) {
    const auto c = candidate_from(j);
    ScoredStep s;
    s.trajectory_index = j.at("trajectory_index").get<std::size_t>();
    s.trajectory_id = c.trajectory_id;
    s.task_id = j.at("task_id").get<std::string>();
    s.step_index = c.step_index;
    s.policy_action = c.policy_action;
    s.policy_score = c.policy_score;
    s.alternatives = c.alternatives;
    s.state_digest = c.state_digest;
    return s;
  });
}

std::string candidate_to_json_line(const CandidateCriticalStep& c) { return candidate_json(c).dump(); }

CandidateCriticalStep candidate_from_json_line(const std::string& line) {
  return parse_record(line, "candidate", [](const json& j) { return candidate_from(j); });
}

std::string branched_step_to_json_line(const BranchedStep& step) {
  json j = candidate_json(step.candidate);
  j["task_id"] = step.task_id;
  json branches = json::array();
  for (const auto& b : step.branches) {
    branches.push_back({{"parent_id", b.parent_trajectory_id},
                        {"step", b.step_index},
                        {"alternative", alternative_json(b.alternative)},
                        {"branch_seed", b.rng_seed},
                        {"outcome", b.outcome},
                        {"trajectory", json::parse(trajectory_to_json_line(b.branched_trajectory))}});
  }
  j["branches"] = branches;
  return j.dump();
}

BranchedStep branched_step_from_json_line(const std::string& line) {
  return parse_record(line, "branch", [](const json& j) {
    BranchedStep step;
    step.candidate = candidate_from(j);
    step.task_id = j.at("task_id").get<std::string>();
    for (const auto& b : j.at("branches")) {
      BranchResult r;
      r.parent_trajectory_id = b.at("parent_id").get<std::string>();
      r.step_index = b.at("step").get<int>();
      r.alternative = alternative_from(b.at("alternative"));
      r.rng_seed = b.at("branch_seed").get<std::uint64_t>();
      r.outcome = b.at("outcome").get<int>();
      r.branched_trajectory = trajectory_from_json_line(b.at("trajectory").dump());
      step.branches.push_back(std::move(r));
    }
    return step;
  });
}

}  // namespace cso
