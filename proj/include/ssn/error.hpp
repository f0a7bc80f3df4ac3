#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssn {

enum class ErrorKind {
  InvalidArgument,
  Dimension,
  EmptyInput,
  StepSize,
  Degenerate,
  Conditioning,
  Parse,
  Io,
  BadMagic,
  VersionMismatch,
  Truncated,
  Checksum,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::Dimension: return "dimension mismatch";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::StepSize: return "step size";
    case ErrorKind::Degenerate: return "degenerate input";
    case ErrorKind::Conditioning: return "ill-conditioned system";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::Truncated: return "truncated file";
    case ErrorKind::Checksum: return "checksum failure";
    case ErrorKind::Config: return "config error";
  }
  return "unknown";
}

/// Base error for the library. The kind lets callers branch without
/// string matching; what() carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace ssn
