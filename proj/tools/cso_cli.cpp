#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "cso/cso.h"

namespace {

int report_failure(cso_status status) {
  std::fprintf(stderr, "%s\n", cso_last_error_record());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Critical step optimization on the ToolChain world"};
  app.set_version_flag("--version", std::string(cso_version()));

  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  int round = 1;
  long long seed = -1;
  std::string kind;
  app.add_option("command", command,
                 "gen-tasks | sft | collect | scan | branch | build-prefs | train-dpo | baseline | iterate | eval | report")
      ->required();
  app.add_option("-c,--config", config_path, "key-value config file (defaults when omitted)");
  app.add_option("-s,--set", overrides, "override a config key, e.g. --set selection.k=5");
  app.add_option("-r,--round", round, "round for single-step commands and eval");
  app.add_option("--seed", seed, "master seed for single-step commands (default: first of run.seeds)");
  app.add_option("--kind", kind, "baseline kind (eto, rft, step_dpo, ipr); for eval, the method to evaluate");
  CLI11_PARSE(app, argc, argv);

  cso_session* session = nullptr;
  if (auto st = cso_session_open(config_path.c_str(), &session); st != CSO_OK) return report_failure(st);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "{\"status\":\"error\",\"code\":\"config\",\"message\":\"--set expects key=value\"}\n");
      cso_session_close(session);
      return CSO_ERR_CONFIG;
    }
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (auto st = cso_session_set(session, key.c_str(), value.c_str()); st != CSO_OK) {
      cso_session_close(session);
      return report_failure(st);
    }
  }
  const auto st = cso_session_run(session, command.c_str(), round, seed, kind.empty() ? nullptr : kind.c_str());
  if (st != CSO_OK) {
    cso_session_close(session);
    return report_failure(st);
  }
  std::printf("%s\n", cso_session_summary(session));
  cso_session_close(session);
  return 0;
}
