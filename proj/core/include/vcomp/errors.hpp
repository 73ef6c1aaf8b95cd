#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vcomp {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  EmptyInput,
  Unsupported,
  Degenerate,       // statistical degeneracy: y = 0, zero-variance spectrum, ...
  NonIdentifiable,  // eigenvalue variance below the identifiability floor
  Numeric,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  /// True for the failures the CLI reports with exit code 2.
  [[nodiscard]] bool is_statistical() const noexcept {
    return kind_ == ErrorKind::Degenerate || kind_ == ErrorKind::NonIdentifiable;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& what);

inline void require(bool ok, ErrorKind kind, const char* what) {
  if (!ok) raise(kind, what);
}

}  // namespace vcomp
