#include "chatlab/error.hpp"

namespace chatlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kUnauthorized: return "unauthorized";
    case ErrorCode::kForbidden: return "forbidden";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kExperimentInactive: return "experiment_inactive";
    case ErrorCode::kExperimentFull: return "experiment_full";
    case ErrorCode::kQuotaExceeded: return "quota_exceeded";
    case ErrorCode::kRateLimited: return "rate_limited";
    case ErrorCode::kBusy: return "busy";
    case ErrorCode::kFeatureDisabled: return "feature_disabled";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return 422;
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kForbidden: return 403;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kExperimentInactive: return 403;
    case ErrorCode::kExperimentFull: return 409;
    case ErrorCode::kQuotaExceeded: return 403;
    case ErrorCode::kRateLimited: return 429;
    case ErrorCode::kBusy: return 409;
    case ErrorCode::kFeatureDisabled: return 403;
    case ErrorCode::kIo: return 500;
  }
  return 500;
}

std::string describe(const Violations& violations) {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.field;
    out += ": ";
    out += v.rule;
  }
  return out;
}

Error::Error(ErrorCode code, std::string message, Violations violations)
    : std::runtime_error(std::move(message)), code_(code), violations_(std::move(violations)) {}

}  // namespace chatlab
