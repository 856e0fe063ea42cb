#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sketchy {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or size disagreement between arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A factorization or iteration hit a numerically invalid state
// (indefinite matrix, degenerate sketch, failed learning-rate estimate).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dense diagnostic sizes above the configured cap.
class CapExceededError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace sketchy
