#pragma once

#include <stdexcept>
#include <string>

namespace s2sk {

// Base class for every error raised by the library. The CLI maps the
// concrete subclass onto its machine-readable error category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

// Bad input: shape mismatch, out-of-range parameter, inconsistent metadata.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "validation"; }
};

// File format and filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

// Non-finite values produced during iteration (Sinkhorn, rollout).
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numerical"; }
};

}  // namespace s2sk
