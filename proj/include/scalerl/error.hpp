#pragma once

#include <stdexcept>
#include <string>

namespace scalerl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, invalid parameters, refused fits.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a usable answer.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Fit refused (too few points, degenerate target, grid below data).
class FitError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace scalerl
