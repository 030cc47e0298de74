#pragma once

#include <stdexcept>
#include <string>

namespace biaslens {

// Base of every error raised by the library. The CLI maps subclasses to
// exit codes: UsageError -> 1, IoError/FormatError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, divergence, degenerate statistics.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed files: bad magic, truncation, checksum and version mismatches.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Invalid arguments and contract violations by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

class LabelError : public UsageError {
 public:
  using UsageError::UsageError;
};

}  // namespace biaslens
