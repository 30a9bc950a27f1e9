#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "bayeslqr/model.hpp"

namespace bayeslqr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Solves the Stein equation X = A' X A + W for Schur-stable A.
// Throws UnstableSystem when spectral_radius(A) >= 1.
Matrix dlyap(const Matrix& A_cl, const Matrix& W);

// Infinite-horizon LQR cost trace(X Pi) with
// X = dlyap(A + B K, Q + K' R K); +inf when the loop is unstable.
double cost_lqr(const GainPolicy& K, const LinearSystem& theta,
                const Matrix& Q, const Matrix& R);

struct DareSolution {
  Matrix X;
  GainPolicy K;  // K = -(R + B'XB)^{-1} B'XA
};

// Stabilizing solution of the discrete algebraic Riccati equation via
// structured doubling plus policy-iteration refinement; residual is
// certified to 1e-8 * |X|.
DareSolution dare(const Matrix& A, const Matrix& B, const Matrix& Q,
                  const Matrix& R);

// cost_lqr(K, truth) / cost_lqr(K_lqr, truth); >= 1, +inf when K
// destabilizes the true system.
double suboptimality(const GainPolicy& K, const LinearSystem& truth,
                     const Matrix& Q, const Matrix& R);

struct CertificateCheck {
  bool valid = false;
  int violating_vertex = -1;  // index of the failing vertex, if any
  int violating_combo = -1;   // index of the failing random combination
};

// Common quadratic Lyapunov certificate over a sampled vertex set:
// (A_i + B_i K)' X (A_i + B_i K) - X < 0 for every vertex, plus spot
// checks of random convex combinations for closed-loop stability.
CertificateCheck verify_convex_hull_certificate(
    const GainPolicy& K, const Matrix& X,
    const std::vector<std::pair<Matrix, Matrix>>& systems, int trials,
    Rng& rng);

using FreshSampler = std::function<std::vector<LinearSystem>(int n, Rng& rng)>;

struct RobustnessResult {
  double unstable_fraction = 0.0;
  int n_samples = 0;
  int n_unstable = 0;
};

// Fraction of freshly sampled confidence-region models destabilized by K
// (strict Schur test: spectral radius >= 1 counts unstable).
RobustnessResult robustness_check(const GainPolicy& K,
                                  const FreshSampler& fresh_sampler,
                                  int n_fresh, Rng& rng);

struct EvaluationReport {
  double suboptimality = kInf;
  double cost_on_truth = kInf;
  std::optional<RobustnessResult> robustness;
  std::optional<bool> certificate_valid;
};

}  // namespace bayeslqr
