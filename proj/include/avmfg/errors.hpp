#pragma once

#include <stdexcept>
#include <string>

namespace avmfg {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters, violated preconditions (CFL, grid shape, config keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Query outside the domain of a field (e.g. time outside [0, T]).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Mismatched sizes or grids.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Speed outside the admissible interval [0, u_max].
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class LinearSolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace avmfg
