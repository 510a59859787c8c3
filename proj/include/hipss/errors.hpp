#pragma once

#include <stdexcept>
#include <string>

namespace hipss {

// Error categories map onto the CLI exit codes (2 config, 3 data, 4 numeric).

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown by cosine / l2_normalize when an argument norm is below kNormEps.
class DegenerateVector : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace hipss
