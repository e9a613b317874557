#pragma once
#include <stdexcept>
#include <string>

namespace vidswap {

// Bad inputs, shape mismatches, violated preconditions. CLI exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failures at runtime (NaN/Inf, diverged integration). CLI exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Frame has no detectable face region.
struct NoFaceError : ValidationError {
  using ValidationError::ValidationError;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace vidswap
