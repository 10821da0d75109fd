#pragma once

#include <stdexcept>
#include <string>

namespace tvp {

enum class ErrorKind {
  InvalidInput,
  Format,
  Schema,
  SkipSample,
  TrainingFailure,
  CalibrationFailure,
  Usage,
};

// Single exception type for the toolkit; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
      return 2;
    case ErrorKind::TrainingFailure:
    case ErrorKind::CalibrationFailure:
      return 4;
    default:
      return 3;
  }
}

}  // namespace tvp
