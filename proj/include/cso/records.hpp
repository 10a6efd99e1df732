#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cso/error.hpp"
#include "cso/pipeline.hpp"

namespace cso {

// JSONL records for the intermediate pipeline artifacts. Every record
// carries "schema": 1.

std::string scored_step_to_json_line(const ScoredStep& step);
ScoredStep scored_step_from_json_line(const std::string& line);

std::string candidate_to_json_line(const CandidateCriticalStep& candidate);
CandidateCriticalStep candidate_from_json_line(const std::string& line);

std::string branched_step_to_json_line(const BranchedStep& step);
BranchedStep branched_step_from_json_line(const std::string& line);

/// Writes one line per item.
template <typename T, typename Fn>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, Fn&& to_line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  for (const auto& item : items) out << to_line(item) << '\n';
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

/// Reads a JSONL artifact; a missing file is reported with its path, and
/// parse errors are prefixed with the path and line number.
template <typename Fn>
auto read_jsonl(const std::filesystem::path& path, Fn&& from_line) {
  using T = decltype(from_line(std::string{}));
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_artifact, "missing artifact " + path.string());
  std::vector<T> items;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      items.push_back(from_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return items;
}

}  // namespace cso
