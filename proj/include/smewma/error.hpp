#pragma once

#include <stdexcept>
#include <string>

namespace smewma {

/// Base class for all library errors. The CLI maps each subclass to a
/// stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed model config, CSV input, or parameter file.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid model: cycles, undeclared references, duplicate
/// coefficient names, unsupported link tags.
class ModelError : public InputError {
 public:
  using InputError::InputError;
};

/// Maximum likelihood fit did not converge or hit separation.
class FitError : public Error {
 public:
  using Error::Error;
};

/// A covariance or information matrix is numerically singular.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Control-limit search failed to bracket the target ARL.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Shift request is invalid for the model.
class ShiftError : public Error {
 public:
  using Error::Error;
};

}  // namespace smewma
