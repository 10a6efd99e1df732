#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cso/error.hpp"
#include "cso/prm.hpp"

namespace cso {

namespace {

struct SemaphoreGuard {
  explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
  std::counting_semaphore<1024>& sem;
};

}  // namespace

RemoteScorer::RemoteScorer(RemoteConfig config, RubricWeights weights)
    : config_(std::move(config)), prompt_(rubric_prompt(weights)),
      inflight_(std::clamp(config_.max_inflight, 1, 1024)) {
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorCode::invalid_argument,
          "remote endpoint '" + url + "' must include a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  require(config_.retry_budget >= 1, ErrorCode::invalid_argument, "retry budget must be at least 1");
}

int RemoteScorer::clamp_warnings() const {
  std::lock_guard lock(mutex_);
  return clamp_warnings_;
}

PrmScore RemoteScorer::score(const std::string& state_rendering, const std::string& action_rendering) {
  require(!state_rendering.empty() && !action_rendering.empty(), ErrorCode::invalid_argument,
          "remote scoring needs nonempty state and action renderings");
  nlohmann::ordered_json body;
  body["schema"] = 1;
  body["state"] = state_rendering;
  body["action"] = action_rendering;
  body["rubric_prompt"] = prompt_;
  const std::string payload = body.dump();

  SemaphoreGuard slot(inflight_);
  std::string last_error = "no attempt made";
  bool last_was_timeout = false;
  for (int attempt = 0; attempt < config_.retry_budget; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.backoff_base * (1 << (attempt - 1)));

    httplib::Client client(scheme_host_port_);
    const auto timeout = config_.timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path_, payload, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;
    if (!res) {
      const auto err = res.error();
      last_was_timeout = err == httplib::Error::ConnectionTimeout ||
                         (err == httplib::Error::Read && elapsed >= timeout * 9 / 10);
      last_error = "request to " + config_.endpoint + " failed: " + httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      last_was_timeout = false;
      last_error = "remote scorer returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      fail(ErrorCode::network, "remote scorer returned HTTP " + std::to_string(res->status));

    double value = 0.0;
    try {
      const auto reply = nlohmann::json::parse(res->body);
      const auto& score = reply.at("score");
      if (!score.is_number()) fail(ErrorCode::malformed_response, "remote score is not a number");
      value = score.get<double>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::malformed_response, std::string("malformed remote response: ") + e.what());
    }
    if (!std::isfinite(value)) fail(ErrorCode::malformed_response, "remote score is not finite");
    PrmScore out{std::clamp(value, 0.0, 1.0), ScoreSource::remote, value < 0.0 || value > 1.0};
    if (out.clamped) {
      std::lock_guard lock(mutex_);
      ++clamp_warnings_;
    }
    return out;
  }
  fail(last_was_timeout ? ErrorCode::timeout : ErrorCode::network,
       last_error + " after " + std::to_string(config_.retry_budget) + " attempt(s)");
}

}  // namespace cso
