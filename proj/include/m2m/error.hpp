#pragma once

#include <stdexcept>
#include <string>

namespace m2m {

// Root of every error the toolkit throws. Each subclass maps to one failure
// class that callers (and the CLI exit-code mapping) can tell apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration or argument problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class BatchTooSmallError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

// Data problems (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedError : public DataError {
 public:
  using DataError::DataError;
};

class InputTooShortError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class PairingViolationError : public DataError {
 public:
  using DataError::DataError;
};

class UndefinedRecoveryError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace m2m
