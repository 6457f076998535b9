#pragma once

#include <stdexcept>
#include <string>

namespace ctxnmt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's dimensional contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unsupported configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (files, corpora, test sets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage; the CLI maps this to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxnmt
