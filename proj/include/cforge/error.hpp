#pragma once

#include <stdexcept>
#include <string>

namespace cforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or CLI usage (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class MalformedFile : public DataError {
 public:
  using DataError::DataError;
};

class FingerprintMismatch : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace cforge
