#pragma once

#include <stdexcept>
#include <string>

namespace hubrouter {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, rejected when a config is validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace hubrouter
