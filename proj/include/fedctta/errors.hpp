#pragma once

#include <stdexcept>

namespace fedctta {

// Error taxonomy shared by every module. All types derive from
// std::runtime_error so callers can catch coarsely or precisely.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: wrong mode, missing cache, empty input lists.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Values outside a mathematical domain (negative probabilities, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch statistics cannot be formed: adaptation on a single-sample batch.
struct DegenerateVarianceError : UsageError {
  using UsageError::UsageError;
};

}  // namespace fedctta
