#pragma once

#include <stdexcept>
#include <string>

namespace popdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed schema, table, record or CSV content.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A global-mode argmax landed outside the attribute's own span.
class UndecodableError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a primitive, a loss or the sampler.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace popdiff
