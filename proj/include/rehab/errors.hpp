#pragma once

#include <stdexcept>
#include <string>

namespace rehab {

/// Caller violated a precondition (dimension mismatch, bad configuration).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rejected input sample (non-finite components).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Factorization or linear solve failed.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long index = -1)
      : std::runtime_error(what), index_(index) {}

  /// Leading-minor index at which the factorization broke down, or -1.
  long index() const noexcept { return index_; }

 private:
  long index_;
};

/// A leaf holds points that are identical in every input dimension.
class DegenerateSplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rehab
