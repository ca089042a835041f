// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dgae {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or precondition on user-facing parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not line up with an architecture or operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, singular inputs, out-of-domain arguments.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. t <= 0).
class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  IoError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit IoError(const std::string& what) : Error(what), offset_(0) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Checkpoint magic/version/hash mismatch or truncation.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgae
