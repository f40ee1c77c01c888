#pragma once

#include <stdexcept>
#include <string>

namespace adabn {

// Base of every error the library throws. Callers that only care about
// "something in adabn failed" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated (empty input, batch too small, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A cache or handle was used with an operation it was not produced by.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerical domain violation (non-positive variance, singular statistics).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A statistics bank lacks an entry required by the model.
class IncompleteBankError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Serialized artifact problems. Each kind is a distinct type so callers and
// tests can tell a bad magic from a truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Stored shapes that contradict each other (tensor vs architecture, bank vs layer).
class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ValidationError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace adabn
