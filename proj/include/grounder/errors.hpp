#ifndef GROUNDER_ERRORS_HPP_
#define GROUNDER_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace grounder {

// Base of every error raised by the library. The CLI maps ValidationError
// subclasses to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input supplied by the caller (shapes, formats, configuration).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class SizingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConflictError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyQueryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A scalar function produced NaN/Inf where a finite value was required.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Training diverged; the message carries epoch, batch and parameter norm.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Top-T selection is tied at the evaluation point, so the MIL loss is not
// differentiable there. Callers jitter the batch and retry.
class TieError : public Error {
 public:
  using Error::Error;
};

}  // namespace grounder

#endif  // GROUNDER_ERRORS_HPP_
