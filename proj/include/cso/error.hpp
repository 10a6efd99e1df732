#pragma once

#include <stdexcept>
#include <string>

namespace cso {

enum class ErrorCode {
  invalid_argument = 1,
  config,
  missing_artifact,
  schema_mismatch,
  io,
  network,
  timeout,
  malformed_response,
  numeric,
  replay_divergence,
  internal,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace cso
