// Links only the shared library.
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include "cso/cso.h"

namespace {

int failures = 0;

void check(bool ok, const char* what) {
  std::printf("%s %s\n", ok ? "ok  " : "FAIL", what);
  if (!ok) ++failures;
}

bool contains(const char* hay, const char* needle) { return hay && std::strstr(hay, needle) != nullptr; }

}  // namespace

int main() {
  const auto dir = std::filesystem::temp_directory_path() / "cso-capi";
  std::filesystem::remove_all(dir);

  check(std::strlen(cso_version()) > 0, "version string");
  check(std::string(cso_status_name(CSO_ERR_MISSING_ARTIFACT)) == "missing_artifact", "status name");

  cso_session* s = nullptr;
  check(cso_session_open(nullptr, nullptr) == CSO_ERR_INVALID_ARGUMENT, "null out pointer");
  check(cso_session_open("/nonexistent/cso.toml", &s) == CSO_ERR_MISSING_ARTIFACT && s == nullptr, "missing config");
  check(contains(cso_last_error_record(), "\"code\""), "error record is JSON with a code");

  check(cso_session_open(nullptr, &s) == CSO_OK && s != nullptr, "open with defaults");
  check(std::strcmp(cso_session_summary(s), "") == 0, "empty summary before a run");
  check(cso_session_set(s, "run.output_dir", dir.c_str()) == CSO_OK, "set output dir");
  check(cso_session_set(s, "tasks.count", "12") == CSO_OK, "set task count");
  check(cso_session_set(s, "foo", "1") == CSO_ERR_CONFIG, "unknown key rejected");
  check(contains(cso_last_error(), "foo"), "error names the key");
  // Cross-field constraints are checked when a command runs.
  check(cso_session_set(s, "selection.gamma_low", "0.9") == CSO_OK, "set gamma_low above gamma_high");
  check(cso_session_run(s, "gen-tasks", 1, -1, nullptr) == CSO_ERR_CONFIG, "run rejects the combination");
  check(contains(cso_last_error(), "selection.gamma_high"), "error names both thresholds");
  check(cso_session_set(s, "selection.gamma_low", "0.45") == CSO_OK, "restore gamma_low");

  check(cso_session_run(s, "gen-tasks", 1, -1, nullptr) == CSO_OK, "gen-tasks");
  check(contains(cso_session_summary(s), "tasks.jsonl"), "summary lists written files");
  check(std::filesystem::exists(dir / "tasks.jsonl"), "tasks written");

  check(cso_session_run(s, "train-dpo", 1, -1, nullptr) == CSO_ERR_MISSING_ARTIFACT, "train-dpo without prefs");
  check(contains(cso_last_error(), "prefs.jsonl"), "missing path named");
  check(contains(cso_last_error_record(), "missing_artifact"), "record carries the code name");
  check(cso_session_run(s, "nope", 1, -1, nullptr) == CSO_ERR_INVALID_ARGUMENT, "unknown command");
  check(cso_session_run(nullptr, "gen-tasks", 1, -1, nullptr) == CSO_ERR_INVALID_ARGUMENT, "null session");

  cso_session_close(s);
  cso_session_close(nullptr);
  std::filesystem::remove_all(dir);
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
