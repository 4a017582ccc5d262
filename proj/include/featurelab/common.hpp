// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <stdexcept>
#include <string>

namespace featurelab {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument / precondition violation (bad parameter range, bad support,
// malformed model). CLI maps this to exit code 2.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

// A quadrature that did not reach the requested tolerance. Carries the best
// estimate and its error bound; never silently returned as a value.
// CLI maps this to exit code 3.
class QuadratureError : public Error {
 public:
  QuadratureError(const std::string& msg, double estimate, double error_bound)
      : Error(msg), estimate_(estimate), error_bound_(error_bound) {}
  double estimate() const { return estimate_; }
  double error_bound() const { return error_bound_; }

 private:
  double estimate_;
  double error_bound_;
};

// Posterior whose normalizer vanishes numerically. CLI maps this to exit 3.
class DegeneratePosteriorError : public Error {
 public:
  explicit DegeneratePosteriorError(const std::string& msg) : Error(msg) {}
};

// Malformed serialized input; carries a 1-based line number when applicable.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg, long line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace featurelab
