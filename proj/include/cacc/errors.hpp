#pragma once

#include <stdexcept>
#include <string>

namespace cacc {

// Bad configuration value; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite or out-of-range numeric input to a pure function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// API misuse: shape mismatches, out-of-order records.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Degenerate least-squares design.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested window/index outside the available data.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace cacc
