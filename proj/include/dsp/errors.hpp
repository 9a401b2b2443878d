// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace dsp {

// Base of every error raised by the library. `kind()` is a stable token used
// by the command-line tool when it prints machine-parseable failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension_error", message) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& message) : Error("non_finite", message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error("value_error", message) {}
};

// Queue-configuration violation. `constraint()` names the failing inequality
// (e.g. "q_k>0") and `block()` the offending block index.
class ConstraintError : public Error {
 public:
  ConstraintError(std::string constraint, std::size_t block, const std::string& message)
      : Error("constraint_violation", message), constraint_(std::move(constraint)), block_(block) {}

  const std::string& constraint() const noexcept { return constraint_; }
  std::size_t block() const noexcept { return block_; }

 private:
  std::string constraint_;
  std::size_t block_;
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& message) : Error("protocol_error", message) {}
};

class DeadlockError : public Error {
 public:
  explicit DeadlockError(const std::string& message) : Error("deadlock", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

}  // namespace dsp
