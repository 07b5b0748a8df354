#pragma once

#include <stdexcept>
#include <string>

namespace retrace {

/// Raised when a dense solve or eigen computation produces an unusable
/// result (ill-conditioning, residual check failure).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an iterative method exceeds its iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an exact-enumeration path would exceed its path budget.
class ResourceError : public std::runtime_error {
 public:
  explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on malformed config or data files; carries a 1-based line number
/// when one is known (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what
                                    : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace retrace
