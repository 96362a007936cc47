#pragma once

#include <stdexcept>
#include <string>

namespace openintent {

// Base for every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input record; message names the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but violates a data invariant (empty split, dim mismatch).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation precondition (shape mismatch, out-of-range input).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate geometry.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / detector file does not match the embedding table or format version.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace openintent
