#pragma once

#include <stdexcept>
#include <string>

namespace mfnet {

/// Inconsistent shapes, architecture or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid data handed to an otherwise well-configured operation.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch-norm in train mode over fewer than two values per channel.
class DegenerateBatchError : public InputError {
 public:
  using InputError::InputError;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Failures inside the optimisation loop (missing gradients, non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfnet
