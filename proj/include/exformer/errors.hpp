#pragma once

#include <stdexcept>
#include <string>

namespace exformer {

// Base of every error raised by the library. The CLI maps each subclass to a
// distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Loss became non-finite during optimization.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace exformer
