#pragma once

#include <stdexcept>
#include <string>

namespace dns {

/// Caller broke a precondition (shape mismatch, bad index, bad config).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization failed or a value went non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulated or estimated trajectory left the finite range.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Malformed or unreadable file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace dns
