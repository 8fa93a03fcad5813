#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "lmpvc/script/ast.hpp"

namespace lmpvc::script {

/// Out-of-subset or malformed command script.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message),
        line_(line),
        message_(message) {}

  int line() const noexcept { return line_; }
  const std::string& message() const noexcept { return message_; }

 private:
  int line_;
  std::string message_;
};

/// Parses the command-script subset: top-level single-parameter function
/// definitions whose bodies use assignments (plain, `+=`, `-=`, two-name tuple
/// destructuring of a call), calls, attribute chains, `+ - * /`, comparisons,
/// `not`/`and`/`or`, `if`/`elif`/`else`, `for x in range(...)` and `while`.
/// Anything else is a ParseError carrying the offending line.
Program parse_program(std::string_view source);

}  // namespace lmpvc::script
