#pragma once

#include <stdexcept>
#include <string>

namespace rationale {

// Caller passed a value outside an operation's domain.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent data file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or contradictory run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rationale
