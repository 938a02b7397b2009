#pragma once

#include <stdexcept>
#include <string>

namespace mmcoord {

/// Failure category. Maps onto the CLI exit codes (validation -> 2, numerical -> 3).
enum class ErrorKind { validation, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void throw_validation(const std::string& what);
[[noreturn]] void throw_numerical(const std::string& what);

}  // namespace mmcoord
