#pragma once

#include <stdexcept>
#include <string>

namespace msfa {

// Bad input: dimension mismatches, malformed files, invalid configuration.
// The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown: non-positive-definite covariance, failed factorization,
// non-finite values produced mid-computation. The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace msfa
