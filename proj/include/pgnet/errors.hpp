#pragma once

#include <stdexcept>
#include <string>

namespace pgnet {

// Thrown for malformed user input: bad files, bad flags, bad dataset layout.
// The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when persisted state disagrees with what the caller expects, e.g. a
// checkpoint whose parameters do not match the model. Exit code 3.
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when NaN/Inf surfaces in a computation that should be finite.
// Exit code 4.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pgnet
