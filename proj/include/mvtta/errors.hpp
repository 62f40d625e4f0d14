#pragma once

#include <stdexcept>
#include <string>

namespace mvtta {

// Base class for every error raised by this library. The CLI maps the
// subtypes onto process exit codes: config 2, data 3, numeric 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

// An operation was called outside its contract (shape mismatch,
// out-of-range argument, empty batch).
class InputError : public Error {
 public:
  using Error::Error;
};

// A configuration document is missing, malformed, or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A data file could not be read, parsed, or reconciled.
class DataError : public Error {
 public:
  using Error::Error;
};

// Distribution calibration cannot proceed, e.g. a class has no
// pseudo-labeled members so the balanced size is undefined.
class CalibrationError : public DataError {
 public:
  using DataError::DataError;
};

// A metric is undefined on the given inputs (nothing scorable).
class MetricError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values where finite ones are required (loss blow-up,
// overflowing update).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvtta
