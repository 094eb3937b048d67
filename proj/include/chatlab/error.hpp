#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chatlab {

enum class ErrorCode {
  kInvalidArgument,
  kUnauthorized,
  kForbidden,
  kNotFound,
  kConflict,
  kExperimentInactive,
  kExperimentFull,
  kQuotaExceeded,
  kRateLimited,
  kBusy,
  kFeatureDisabled,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// HTTP status an error code is reported with.
int http_status(ErrorCode code);

/// A single rule violation found while validating a definition or a submission.
struct Violation {
  std::string field;
  std::string rule;

  bool operator==(const Violation&) const = default;
};

using Violations = std::vector<Violation>;

std::string describe(const Violations& violations);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, Violations violations = {});

  ErrorCode code() const noexcept { return code_; }
  const Violations& violations() const noexcept { return violations_; }

 private:
  ErrorCode code_;
  Violations violations_;
};

}  // namespace chatlab
