#pragma once

#include <stdexcept>
#include <string>

namespace vidann {

// Broken precondition on an in-process call (caller bug).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad input data: files, request bodies, user supplied boxes.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string source, int line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}
  int line() const noexcept { return line_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
  int line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vidann
