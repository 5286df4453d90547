#pragma once

#include <stdexcept>
#include <string>

namespace gream {

// Exit codes are part of the CLI contract.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const { return ExitCode::kConfig; }
};

/// Malformed caller input: non-finite values, out-of-range codes, shape mismatches.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Too many items collide on one semantic prefix for the conflict slot.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

/// Parse failure in an input file; carries the offending line when known.
class ParseError : public IoError {
 public:
  using IoError::IoError;
};

/// Input data that parses but leaves nothing usable (e.g. empty after filtering).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumeric; }
};

}  // namespace gream
