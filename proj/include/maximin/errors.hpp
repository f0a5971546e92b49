#pragma once

#include <stdexcept>
#include <string>

namespace maximin {

/// Caller broke a precondition (bad dimensions, out-of-range index, bad option).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite input or a numeric breakdown inside an algorithm.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A constrained problem had no feasible point at any allowed tuning level.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix too close to singular for an exact solve.
class SingularError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace detail
}  // namespace maximin
