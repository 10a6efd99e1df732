#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cso/config.hpp"

namespace cso {

/// Per-invocation options that are not part of the run configuration.
struct CommandOptions {
  /// Round for the single-step commands (collect .. train-dpo, eval).
  int round = 1;
  /// Seed for the single-step commands; defaults to the first of run.seeds.
  std::optional<std::uint64_t> seed;
  /// Baseline kind for `baseline`.
  std::string kind;
};

struct CommandResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
  /// Machine-readable summary of what the command did.
  std::string summary_json;
};

const std::vector<std::string>& command_names();

/// Runs one command against the artifact tree under config.output_dir.
/// Upstream artifacts that are missing raise ErrorCode::missing_artifact
/// naming the expected path.
CommandResult run_command(const std::string& command, const RunConfig& config, const CommandOptions& options = {});

/// Artifact locations.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path tasks() const { return root / "tasks.jsonl"; }
  std::filesystem::path eval_tasks() const { return root / "eval_tasks.jsonl"; }
  std::filesystem::path sft_dir() const { return root / "sft"; }
  std::filesystem::path sft_policy() const { return sft_dir() / "policy.bin"; }
  std::filesystem::path demos() const { return sft_dir() / "demos.jsonl"; }
  std::filesystem::path method_dir(const std::string& method) const { return root / method; }
  std::filesystem::path seed_dir(const std::string& method, std::uint64_t seed) const {
    return method_dir(method) / ("seed-" + std::to_string(seed));
  }
  std::filesystem::path round_dir(const std::string& method, std::uint64_t seed, int round) const {
    return seed_dir(method, seed) / ("round" + std::to_string(round));
  }
  /// Round 0 is the shared SFT policy.
  std::filesystem::path policy(const std::string& method, std::uint64_t seed, int round) const {
    return round == 0 ? sft_policy() : round_dir(method, seed, round) / "policy.bin";
  }
  std::filesystem::path evals_dir() const { return root / "evals"; }
};

}  // namespace cso
