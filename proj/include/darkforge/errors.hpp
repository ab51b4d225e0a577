#pragma once

#include <stdexcept>
#include <string>

namespace darkforge {

/// Shape or extent contract violated (odd dims, channel mismatch, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument is outside its admissible range.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller broke an API precondition (non-scalar loss, missing gradient, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// File could not be read, parsed or matched against its sidecar/manifest.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientFeaturesError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the training loop when the loss stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace darkforge
