// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cme {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (corpus files, token indices, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Metric requested on an empty or invalid record set.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward on a non-scalar, replay of a consumed tape.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input for which the quantity is undefined (e.g. attribution with no real tokens).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN/Inf loss or gradient).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cme
