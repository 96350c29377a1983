#pragma once

#include <stdexcept>
#include <string>

namespace msam {

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared where a finite value was required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: consumed tapes, out-of-range labels, empty batches.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Inconsistent model, data or experiment specification.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace msam
