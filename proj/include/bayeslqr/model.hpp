#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "bayeslqr/rng.hpp"

namespace bayeslqr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Lower-triangular factor L with P = L * L', valid for singular PSD input
// (zero pivots produce zero columns). Throws NumericalError if P is not
// reproduced within tol_rel * max(1, |P|_max) elementwise.
Matrix psd_cholesky(const Matrix& P, double tol_rel = 1e-10);

// x_{t+1} = A x_t + B u_t + w_t,  w_t ~ N(0, Pi).
struct LinearSystem {
  Matrix A;
  Matrix B;
  Matrix Pi;
  Matrix G;  // cached lower-triangular factor, Pi = G G'

  LinearSystem(Matrix A_, Matrix B_, Matrix Pi_);

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
};

// One trajectory; states and inputs as rows indexed by time. Stores T+1
// states and T+1 inputs; only the first T inputs enter likelihoods.
struct Rollout {
  Matrix x;  // (T+1) x n_x
  Matrix u;  // (T+1) x n_u  (or T x n_u)

  int transitions() const {
    return static_cast<int>(std::min(x.rows() - 1, u.rows()));
  }
};

struct Dataset {
  int n_x = 0;
  int n_u = 0;
  std::vector<Rollout> rollouts;

  Dataset() = default;
  Dataset(int nx, int nu, std::vector<Rollout> r);

  int n_triples() const;
};

struct GainPolicy {
  Matrix K;  // n_u x n_x
};

// Input signal for rollout simulation; called once per time step.
using InputSource = std::function<Vector(int t, Rng& rng)>;

// u_t ~ N(0, I_{n_u}), the excitation used for the synthetic benchmark.
InputSource gaussian_input(int n_u);
InputSource zero_input(int n_u);

// A symmetric Toeplitz, diagonal 1.01 and first off-diagonal 0.01; B = I,
// Pi = I. The synthetic benchmark family.
LinearSystem make_toeplitz_system(int n_x);

Rollout simulate_rollout(const LinearSystem& system, int T,
                         const InputSource& input, const Vector& x0, Rng& rng);

double spectral_radius(const Matrix& m);

// PBH test: every eigenvalue of A with |lambda| >= 1 - 1e-9 must leave
// [A - lambda I, B] at full row rank, with singular-value threshold
// tol * sigma_max.
bool is_stabilizable(const Matrix& A, const Matrix& B, double tol = 1e-8);

}  // namespace bayeslqr
