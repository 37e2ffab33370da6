#pragma once

#include <stdexcept>
#include <string>

namespace s2m {

// Violated precondition or invalid configuration. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while running (I/O, non-finite numerics, bad file contents). CLI exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace s2m
