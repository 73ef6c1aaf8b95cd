#include "vcomp/errors.hpp"

namespace vcomp {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::NonIdentifiable: return "non-identifiable";
    case ErrorKind::Numeric: return "numeric failure";
    case ErrorKind::Io: return "i/o error";
  }
  return "unknown";
}

void raise(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

}  // namespace vcomp
