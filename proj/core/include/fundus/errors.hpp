#pragma once

#include <stdexcept>

namespace fundus {

/// Invalid configuration or command line.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent input data.
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN or infinity reaching a network or loss; a precondition violation
/// for callers, divergence when raised inside a training step.
class NonFiniteInput : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace fundus
