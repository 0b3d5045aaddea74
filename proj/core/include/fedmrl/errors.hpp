#pragma once

#include <stdexcept>
#include <string>

namespace fedmrl {

/// Base of every error raised by the simulator.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, lengths or parameter values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Empty or otherwise unusable input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a semantic constraint (e.g. label >= M).
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite loss, activation or gradient.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what, int round = -1, long step = -1)
      : Error(what), round_(round), step_(step) {}
  int round() const noexcept { return round_; }
  long step() const noexcept { return step_; }

 private:
  int round_;
  long step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedmrl
