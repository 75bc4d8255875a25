#pragma once

#include <stdexcept>
#include <string>

namespace ccl {

// Numeric values match the C API status codes. The CLI folds io and
// integrity into exit code 1.
enum class ErrorKind : int {
  validation = 1,
  transport = 2,
  numeric = 3,
  io = 4,
  integrity = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::validation, what) {}
};

struct ParseError : ValidationError {
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct TransportError : Error {
  TransportError(const std::string& what, std::size_t completed)
      : Error(ErrorKind::transport, what), completed(completed) {}
  // Number of results that finished before the failure.
  std::size_t completed;
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct IntegrityError : Error {
  explicit IntegrityError(const std::string& what) : Error(ErrorKind::integrity, what) {}
};

}  // namespace ccl
