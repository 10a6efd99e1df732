#include "cso/cso.h"

#include <json.hpp>
#include <memory>
#include <string>

#include "cso/commands.hpp"
#include "cso/config.hpp"
#include "cso/error.hpp"

struct cso_session {
  cso::RunConfig config;
  std::string summary;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_record;

cso_status to_status(cso::ErrorCode code) { return static_cast<cso_status>(static_cast<int>(code)); }

cso_status record(cso_status status, const std::string& message) {
  g_error = message;
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["code"] = cso_status_name(status);
  j["message"] = message;
  g_record = j.dump();
  return status;
}

template <typename Fn>
cso_status guarded(Fn&& fn) {
  try {
    fn();
    g_error.clear();
    g_record.clear();
    return CSO_OK;
  } catch (const cso::Error& e) {
    return record(to_status(e.code()), e.what());
  } catch (const std::exception& e) {
    return record(CSO_ERR_INTERNAL, e.what());
  } catch (...) {
    return record(CSO_ERR_INTERNAL, "unknown error");
  }
}

}  // namespace

extern "C" {

const char* cso_version(void) { return "1.0.0"; }

const char* cso_status_name(cso_status status) {
  if (status == CSO_OK) return "ok";
  if (status < CSO_ERR_INVALID_ARGUMENT || status > CSO_ERR_INTERNAL) return "unknown";
  return cso::error_code_name(static_cast<cso::ErrorCode>(status));
}

cso_status cso_session_open(const char* config_path, cso_session** out) {
  if (out == nullptr) return record(CSO_ERR_INVALID_ARGUMENT, "output pointer is null");
  *out = nullptr;
  return guarded([&] {
    auto s = std::make_unique<cso_session>();
    if (config_path != nullptr && *config_path != '\0')
      s->config = cso::load_config(config_path);
    else
      s->config = cso::parse_config("");
    *out = s.release();
  });
}

cso_status cso_session_set(cso_session* session, const char* key, const char* value) {
  if (session == nullptr || key == nullptr || value == nullptr)
    return record(CSO_ERR_INVALID_ARGUMENT, "session, key and value must be non-null");
  return guarded([&] { cso::set_config_value(session->config, key, value); });
}

cso_status cso_session_run(cso_session* session, const char* command, int round, long long seed, const char* kind) {
  if (session == nullptr || command == nullptr)
    return record(CSO_ERR_INVALID_ARGUMENT, "session and command must be non-null");
  return guarded([&] {
    cso::CommandOptions options;
    options.round = round;
    if (seed >= 0) options.seed = static_cast<std::uint64_t>(seed);
    if (kind != nullptr) options.kind = kind;
    session->summary = cso::run_command(command, session->config, options).summary_json;
  });
}

const char* cso_session_summary(const cso_session* session) {
  return session == nullptr ? "" : session->summary.c_str();
}

void cso_session_close(cso_session* session) { delete session; }

const char* cso_last_error(void) { return g_error.c_str(); }

const char* cso_last_error_record(void) { return g_record.c_str(); }

}  // extern "C"
