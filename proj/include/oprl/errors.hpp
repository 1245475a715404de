#pragma once

#include <stdexcept>
#include <string>

namespace oprl {

// Base class for every error raised by the library. Each subclass maps to one
// failure category so callers (and the CLI) can react by type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class InvalidConfig : public Error { using Error::Error; };
class InvalidTask : public Error { using Error::Error; };
class InvalidInput : public Error { using Error::Error; };
class UndefinedMetric : public Error { using Error::Error; };
class PoolExhausted : public Error { using Error::Error; };
class Conflict : public Error { using Error::Error; };
class LabelerFailure : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace oprl
