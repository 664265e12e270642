#pragma once

#include <stdexcept>
#include <string>

namespace flowvip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. The message names every offending shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad or unknown configuration keys, invalid hyperparameter combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or malformed dataset / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an operation, or a non-finite training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowvip
