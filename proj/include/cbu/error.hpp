#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cbu {

enum class ErrorKind {
  config,
  backend,
  timeout,
  protocol,
  data,
  structural,
  parse,
  range,
  integrity,
  io,
  argument,
  convergence,
  render,
  pipeline,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::backend: return "backend";
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::data: return "data";
    case ErrorKind::structural: return "structural";
    case ErrorKind::parse: return "parse";
    case ErrorKind::range: return "range";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::io: return "io";
    case ErrorKind::argument: return "argument";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::render: return "render";
    case ErrorKind::pipeline: return "pipeline";
  }
  return "unknown";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit status for the CLI: 2 config, 3 backend, 4 data.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::argument:
      return 2;
    case ErrorKind::backend:
    case ErrorKind::timeout:
    case ErrorKind::protocol:
      return 3;
    default:
      return 4;
  }
}

}  // namespace cbu
