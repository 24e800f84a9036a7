#pragma once

#include <stdexcept>
#include <string>

namespace qforest {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between two operands (vector lengths, matrix dims).
struct DimensionError : Error {
  using Error::Error;
};

// NaN/Inf where a finite value is required, or a numeric abort.
struct NumericError : Error {
  using Error::Error;
};

// Input that is syntactically valid but semantically unusable
// (empty collection, label out of range, degenerate simplex point).
struct InputError : Error {
  using Error::Error;
};

// Malformed text input (CSV cell that does not parse, ragged row).
struct ParseError : Error {
  using Error::Error;
};

// Malformed binary input (bad magic, truncated model file).
struct FormatError : Error {
  using Error::Error;
};

// Invalid configuration or misuse of a stateful contract.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace qforest
