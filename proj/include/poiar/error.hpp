#pragma once

#include <stdexcept>
#include <string>

namespace poiar {

// Malformed input: bad edges, inconsistent panels, unknown config keys.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure: eigensolver/Cholesky breakdown, log of a nonpositive factor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace poiar
