#include "cso/error.hpp"

namespace cso {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::config: return "config";
    case ErrorCode::missing_artifact: return "missing_artifact";
    case ErrorCode::schema_mismatch: return "schema_mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::network: return "network";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::malformed_response: return "malformed_response";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::replay_divergence: return "replay_divergence";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

}  // namespace cso
