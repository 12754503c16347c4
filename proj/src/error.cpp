#include "weightscan/error.hpp"

namespace weightscan {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::bad_header: return "bad_header";
    case ErrorKind::bad_layout: return "bad_layout";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::malformed: return "malformed";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::io: return "io";
    case ErrorKind::duplicate_id: return "duplicate_id";
    case ErrorKind::bad_label: return "bad_label";
    case ErrorKind::duplicate_tensor: return "duplicate_tensor";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::missing_tensor: return "missing_tensor";
    case ErrorKind::empty_signature: return "empty_signature";
    case ErrorKind::single_class: return "single_class";
    case ErrorKind::unlabeled: return "unlabeled";
    case ErrorKind::architecture_mismatch: return "architecture_mismatch";
    case ErrorKind::missing_annotation: return "missing_annotation";
    case ErrorKind::bad_argument: return "bad_argument";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::retry_exhausted: return "retry_exhausted";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace weightscan
