#pragma once

#include <stdexcept>
#include <string>

namespace diffseg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameter, schedule bound, or option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input values violate a domain constraint (non-binary mask, probability out of [0,1], ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Optimizer invoked without the state it needs.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Division by a vanishing schedule coefficient.
class SingularityError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffseg
