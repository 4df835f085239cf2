#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace collab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration, shape or label value violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; the message always carries the source name and line.
class ParseError : public IoError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : IoError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Process exit code convention used by the command line tool.
inline int exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const ValidationError*>(&e)) return 1;
  if (dynamic_cast<const NumericError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  return 1;
}

}  // namespace collab
