// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clmoe {

/// Base of every error the library raises. Each subclass maps to exactly one
/// process exit code in the CLI (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input values, shapes or configuration. Exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An operation was called out of its required order (e.g. backward without a
/// matching forward, or out-of-order task ids). Exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number. Exit code 2.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Filesystem failures. Exit code 3.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameters during training. Exit code 4.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Checksum or format-version mismatch when loading a checkpoint. Exit code 5.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant broken (e.g. a seen task without an anchor). Exit code 5.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitIntegrity = 5;

// Most-derived classes first; ParseError is a ValidationError.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const IntegrityError*>(&e)) return kExitIntegrity;
  if (dynamic_cast<const ConsistencyError*>(&e)) return kExitIntegrity;
  return kExitValidation;
}

}  // namespace clmoe
