#pragma once

#include <stdexcept>
#include <string>

namespace ftlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or ranks.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed data, e.g. a label outside the class range.
class DataError : public Error {
 public:
  using Error::Error;
};

/// PGD could not proceed (non-finite gradient).
class AttackError : public Error {
 public:
  AttackError(std::size_t step, const std::string& message)
      : Error("pgd step " + std::to_string(step) + ": " + message), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

/// Training loss became NaN/inf.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& message)
      : Error("diverged at step " + std::to_string(step) + ": " + message), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& message)
      : Error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ftlab
