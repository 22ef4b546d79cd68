#pragma once

#include <stdexcept>
#include <string>

namespace coad {

// Malformed or inconsistent input data (corpus files, checkpoints, requests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or contradictory configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shape mismatch or misuse of the differentiation tape.
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dialogue state machine misuse.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace coad
