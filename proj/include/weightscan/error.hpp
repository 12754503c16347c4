#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace weightscan {

/// Every failure the library can raise, so callers (and tests) can react to
/// the specific condition instead of parsing message strings.
enum class ErrorKind {
  // container / file format
  bad_magic,
  bad_header,
  bad_layout,
  truncated,
  non_finite,
  malformed,
  version_mismatch,
  io,
  // data contract
  duplicate_id,
  bad_label,
  duplicate_tensor,
  shape_mismatch,
  missing_tensor,
  empty_signature,
  single_class,
  unlabeled,
  architecture_mismatch,
  missing_annotation,
  bad_argument,
  // numerics
  degenerate,
  retry_exhausted,
  divergence,
};

/// Process exit code groups used by the CLI: 2 usage, 3 data, 4 numerical.
enum class ErrorCategory : int { usage = 2, data = 3, numerical = 4 };

constexpr ErrorCategory category(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::bad_argument:
      return ErrorCategory::usage;
    case ErrorKind::degenerate:
    case ErrorKind::retry_exhausted:
    case ErrorKind::divergence:
      return ErrorCategory::numerical;
    default:
      return ErrorCategory::data;
  }
}

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(category(kind_)); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace weightscan
