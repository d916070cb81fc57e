#pragma once

#include <stdexcept>
#include <string>

namespace posefree {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration values or unsupported options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed arguments to an operation (shape mismatch, empty sets, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Numerically degenerate input (zero quaternion, antipodal mean, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// A training-time contract was broken (e.g. context == all frames).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace posefree
