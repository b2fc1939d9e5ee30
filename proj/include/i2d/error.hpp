#pragma once

#include <stdexcept>
#include <string>

namespace i2d {

enum class ErrorCode {
  parse,
  invariant,
  precondition,
  io,
  config,
  protocol,
  version_mismatch,
  capability,
  spawn,
  timeout,
  backend_crash,
  backend_error,
  unsupported_metric,
  non_finite,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::invariant: return "invariant";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::capability: return "capability";
    case ErrorCode::spawn: return "spawn";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::backend_crash: return "backend_crash";
    case ErrorCode::backend_error: return "backend_error";
    case ErrorCode::unsupported_metric: return "unsupported_metric";
    case ErrorCode::non_finite: return "non_finite";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace i2d
