#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsopt {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an argument that violates a documented precondition.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// A binary or text artifact on disk is malformed.  byte_offset() points at
// the first byte that failed validation.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_ = 0;
};

// A computation produced a non-finite value or otherwise left the domain
// where the algorithm is meaningful.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A kernel matrix could not be factorized even at the maximum jitter.
class SingularModelError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Every acquisition candidate was excluded; the search cannot propose a point.
class ExhaustedGridError : public Error {
 public:
  using Error::Error;
};

// Configuration file or flag values are missing, malformed, or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace lsopt
