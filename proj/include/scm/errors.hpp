#pragma once

#include <stdexcept>
#include <string>

namespace scm {

/// Base of every library error. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a computation left its numeric domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition (non-scalar loss, wrong mode).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed corpus, unsatisfiable retrieval request, invalid sample.
class DataError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by a different format version.
class MigrationError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not carry exactly the parameters a model expects.
class InventoryError : public Error {
 public:
  using Error::Error;
};

}  // namespace scm
