// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <stdexcept>
#include <string>

namespace treehmm {

// User-facing input problems: bad grammar, bad dimensions, bad files.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& msg, size_t position)
      : InputError(msg + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  size_t position() const { return position_; }

 private:
  size_t position_;
};

class ValidationError : public InputError {
 public:
  explicit ValidationError(const std::string& msg) : InputError(msg) {}
};

// Internal numerical failures (underflow, impossible observations, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace treehmm
