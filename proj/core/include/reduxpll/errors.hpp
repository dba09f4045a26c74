// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace reduxpll {

/// Root of every error raised by the library. The CLI maps subclasses to exit
/// codes, so new failure kinds should derive from the closest existing type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (off-simplex target, bad tau...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid hyper-parameters or missing inputs required by a configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset contents violate an invariant (candidate sets, posteriors, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Theory scenario is singular or has no instance in the analysed set.
class ScenarioError : public DataError {
 public:
  using DataError::DataError;
};

/// Supplied constants do not satisfy a stated assumption (e.g. Tsybakov).
class AssumptionViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Messages carry the path and line or JSON pointer.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf escaped a computation, or a sampler could not satisfy its
/// constraints.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace reduxpll
