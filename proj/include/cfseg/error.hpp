#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfseg {

enum class ErrorCode {
  kInvalidArgument,
  kMalformedHeader,
  kUnsupportedDatatype,
  kLabelOutOfRange,
  kIo,
  kShapeMismatch,
  kOrganMissing,
  kPlacementFailed,
  kMissingTrace,
  kDivergence,
  kEmptyInput,
  kUnmatchedCase,
  kCheckpointMismatch,
};

std::string_view error_code_name(ErrorCode code);

/// Library-wide exception. `code()` is stable and used by the CLI for its
/// machine-readable error line.
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

}  // namespace cfseg
