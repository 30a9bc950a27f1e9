#pragma once

#include <stdexcept>
#include <string>

namespace bayeslqr {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Regressor matrix is rank deficient; (A, B) not identifiable.
struct InsufficientExcitation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat prior with singular information matrix.
struct ImproperPosterior : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularCovariance : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientStabilizableSamples : std::runtime_error {
  InsufficientStabilizableSamples(const std::string& msg, int survivors_)
      : std::runtime_error(msg), survivors(survivors_) {}
  int survivors;
};

// Closed loop is not Schur stable; the Lyapunov cost diverges.
struct UnstableSystem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bayeslqr
