#pragma once

#include <stdexcept>
#include <string>

namespace garden {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (schedule bounds, conv geometry, layer sizes).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericsError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (double merge, unloaded model).
class StateError : public Error {
 public:
  using Error::Error;
};

// Index outside a valid range (token ids, timesteps).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

// File written by an incompatible format version.
class VersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Damaged file: bad magic, truncation, inconsistent header.
class CorruptionError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace garden
