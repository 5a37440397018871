#pragma once

#include <stdexcept>

namespace schedopt {

// Bad input: malformed config, invalid schedule, unknown flag. Maps to CLI exit status 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while running a valid configuration (non-finite loss, I/O). Maps to exit status 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace schedopt
