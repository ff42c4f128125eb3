#pragma once

#include <stdexcept>
#include <string>

namespace rvm {

/// Violated precondition or broken invariant at an API boundary.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Tensor extents that do not line up for an operation.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Invalid or inconsistent configuration (stage plans, kernel sizes, files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that is well-formed but carries no usable signal (no positives, no
/// candidates). The CLI maps this to its own exit code.
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training; the message names epoch and tuple.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rvm
