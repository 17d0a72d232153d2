#pragma once

#include <stdexcept>
#include <string>

namespace invsen {

// Coarse error classes. The CLI maps them onto exit codes.
enum class ErrorKind {
    shape,      // dimension or size mismatch
    config,     // invalid configuration or missing required input
    io,         // filesystem failure
    format,     // malformed file contents
    numerical,  // non-finite values, divergence, non-convergence
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::numerical: return "numerical";
    }
    return "unknown";
}

}  // namespace invsen
