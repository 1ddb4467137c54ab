#pragma once

#include <stdexcept>
#include <string>

namespace aetsep {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad stride, unknown variant, mismatched filter count.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Signal shorter than the filter / window / context it must cover.
class InputTooShortError : public Error {
 public:
  using Error::Error;
};

// Squared correlation in a ratio objective fell below its floor.
class DegenerateCorrelationError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace aetsep
