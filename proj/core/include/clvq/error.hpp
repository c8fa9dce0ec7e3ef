#pragma once

#include <stdexcept>
#include <string>

namespace clvq {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: invalid arguments, unknown keys, inconsistent options.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data on disk or in memory.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatVersionError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss, divergence, or other numerical breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace clvq
