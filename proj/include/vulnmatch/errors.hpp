#pragma once

#include <stdexcept>
#include <string>

namespace vulnmatch {

// Error taxonomy shared across the library. The CLI maps kinds to exit codes
// (config -> 2, data -> 3, everything else -> 1).
enum class ErrorKind {
  Config,
  Data,
  Dimension,
  Numeric,
  Usage,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  const char* kind_name() const {
    switch (kind_) {
      case ErrorKind::Config: return "config";
      case ErrorKind::Data: return "data";
      case ErrorKind::Dimension: return "dimension";
      case ErrorKind::Numeric: return "numeric";
      case ErrorKind::Usage: return "usage";
      case ErrorKind::Io: return "io";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace vulnmatch
