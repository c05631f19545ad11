#pragma once

#include <stdexcept>
#include <string>

namespace volseg {

enum class ErrorCategory {
  shape,   // operand extents disagree
  value,   // argument outside its legal domain
  config,  // experiment or model configuration invalid
  io,      // filesystem failures
  format,  // malformed or unsupported file contents
  state,   // operation invoked in the wrong lifecycle state
};

const char* to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error(ErrorCategory::shape, message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error(ErrorCategory::value, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorCategory::config, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorCategory::io, message) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& message) : Error(ErrorCategory::state, message) {}
};

// Distinct reasons a file can be rejected.
enum class FormatIssue { bad_magic, unsupported_format, unsupported_datatype, truncated, bad_header, bad_version };

const char* to_string(FormatIssue issue);

class FormatError : public Error {
 public:
  FormatError(FormatIssue issue, const std::string& message)
      : Error(ErrorCategory::format, std::string(to_string(issue)) + ": " + message), issue_(issue) {}

  FormatIssue issue() const noexcept { return issue_; }

 private:
  FormatIssue issue_;
};

}  // namespace volseg
