#pragma once

#include <stdexcept>
#include <string>

namespace flexlmm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside its admissible domain (sigma <= 0, gamma not in Gamma, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Matrix or vector sizes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// The model/prior/family combination is not valid for the requested operation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A result exists only under hypotheses the input does not satisfy.
class InapplicableError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A numerical procedure failed to reach its tolerance. Carries the best estimate so far.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double partial_estimate = 0.0, double error_estimate = 0.0)
      : Error(what), partial_(partial_estimate), error_(error_estimate) {}

  double partial_estimate() const noexcept { return partial_; }
  double error_estimate() const noexcept { return error_; }

 private:
  double partial_;
  double error_;
};

/// Input file could not be parsed. Row/column are 1-based; 0 means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0, std::size_t column = 0)
      : Error(what), row_(row), column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace flexlmm
