#include "bayeslqr/evaluation.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bayeslqr/errors.hpp"

namespace bayeslqr {

namespace {

// One vectorized Stein solve (I - A' (x) A') vec(X) = vec(W).
Matrix stein_solve(const Eigen::PartialPivLU<Matrix>& lu, const Matrix& W) {
  const Eigen::Index n = W.rows();
  Eigen::Map<const Vector> w(W.data(), n * n);
  Vector xv = lu.solve(w);
  Matrix X = Eigen::Map<const Matrix>(xv.data(), n, n);
  return 0.5 * (X + X.transpose());
}

}  // namespace

Matrix dlyap(const Matrix& A_cl, const Matrix& W) {
  const Eigen::Index n = A_cl.rows();
  if (A_cl.cols() != n || W.rows() != n || W.cols() != n)
    throw DimensionError("dlyap: dimension mismatch");
  if (spectral_radius(A_cl) >= 1.0)
    throw UnstableSystem("dlyap: closed loop is not Schur stable");

  const Matrix At = A_cl.transpose();
  Matrix kron(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      kron.block(i * n, j * n, n, n) = At(j, i) * At;
  Matrix lhs = Matrix::Identity(n * n, n * n) - kron;
  Eigen::PartialPivLU<Matrix> lu(lhs);

  Matrix Ws = 0.5 * (W + W.transpose());
  Matrix X = stein_solve(lu, Ws);
  // one step of iterative refinement
  Matrix resid = Ws + At * X * A_cl - X;
  X += stein_solve(lu, resid);

  double xnorm = std::max(X.norm(), 1e-300);
  if ((Ws + At * X * A_cl - X).norm() > 1e-9 * xnorm)
    throw NumericalError("dlyap: residual check failed");
  return X;
}

double cost_lqr(const GainPolicy& K, const LinearSystem& theta,
                const Matrix& Q, const Matrix& R) {
  if (K.K.rows() != theta.nu() || K.K.cols() != theta.nx())
    throw DimensionError("cost_lqr: gain dimension mismatch");
  Matrix A_cl = theta.A + theta.B * K.K;
  if (spectral_radius(A_cl) >= 1.0) return kInf;
  Matrix X = dlyap(A_cl, Q + K.K.transpose() * R * K.K);
  return (X * theta.Pi).trace();
}

DareSolution dare(const Matrix& A, const Matrix& B, const Matrix& Q,
                  const Matrix& R) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != m || R.cols() != m)
    throw DimensionError("dare: dimension mismatch");
  if (!is_stabilizable(A, B))
    throw UnstableSystem("dare: (A, B) is not stabilizable");

  Eigen::LLT<Matrix> rllt(R);
  if (rllt.info() != Eigen::Success)
    throw NumericalError("dare: R is not positive definite");

  // structured doubling
  Matrix Ak = A;
  Matrix Gk = B * rllt.solve(B.transpose());
  Matrix Hk = 0.5 * (Q + Q.transpose());
  const Matrix I = Matrix::Identity(n, n);
  bool doubled = false;
  for (int it = 0; it < 60; ++it) {
    Eigen::PartialPivLU<Matrix> lu(I + Gk * Hk);
    Matrix W1 = lu.solve(Ak);          // (I + G H)^{-1} A
    Matrix W2 = lu.solve(Gk);          // (I + G H)^{-1} G
    Matrix Hn = Hk + Ak.transpose() * (Hk * W1);
    Matrix Gn = Gk + Ak * W2 * Ak.transpose();
    Matrix An = Ak * W1;
    Hn = 0.5 * (Hn + Hn.transpose());
    Gn = 0.5 * (Gn + Gn.transpose());
    double dh = (Hn - Hk).norm();
    Ak = An;
    Gk = Gn;
    Hk = Hn;
    if (!Hk.allFinite()) throw NumericalError("dare: doubling diverged");
    if (dh <= 1e-13 * std::max(1.0, Hk.norm())) {
      doubled = true;
      break;
    }
  }
  if (!doubled && Ak.norm() > 1e-6 * std::max(1.0, A.norm()))
    throw NumericalError("dare: doubling did not converge");

  // policy-iteration refinement to tighten the residual
  auto gain_of = [&](const Matrix& X) -> Matrix {
    Matrix S = R + B.transpose() * X * B;
    return -Eigen::LLT<Matrix>(S).solve(B.transpose() * X * A);
  };
  Matrix X = Hk;
  Matrix K = gain_of(X);
  for (int it = 0; it < 10; ++it) {
    Matrix A_cl = A + B * K;
    if (spectral_radius(A_cl) >= 1.0) break;
    X = dlyap(A_cl, Q + K.transpose() * R * K);
    Matrix Kn = gain_of(X);
    double dk = (Kn - K).norm();
    K = Kn;
    if (dk <= 1e-14 * std::max(1.0, K.norm())) break;
  }

  Matrix S = R + B.transpose() * X * B;
  Matrix resid =
      A.transpose() * X * A - X -
      (A.transpose() * X * B) * Eigen::LLT<Matrix>(S).solve(B.transpose() * X * A) +
      Q;
  double xnorm = std::max(X.norm(), 1e-300);
  if (resid.norm() > 1e-8 * xnorm)
    throw NumericalError("dare: residual check failed");
  if (spectral_radius(A + B * K) >= 1.0)
    throw NumericalError("dare: returned gain is not stabilizing");
  return DareSolution{std::move(X), GainPolicy{std::move(K)}};
}

double suboptimality(const GainPolicy& K, const LinearSystem& truth,
                     const Matrix& Q, const Matrix& R) {
  DareSolution opt = dare(truth.A, truth.B, Q, R);
  double j_opt = cost_lqr(opt.K, truth, Q, R);
  double j = cost_lqr(K, truth, Q, R);
  if (!std::isfinite(j)) return kInf;
  if (j_opt <= 0.0) return 1.0;  // Pi = 0: every stabilizing gain is optimal
  return j / j_opt;
}

CertificateCheck verify_convex_hull_certificate(
    const GainPolicy& K, const Matrix& X,
    const std::vector<std::pair<Matrix, Matrix>>& systems, int trials,
    Rng& rng) {
  CertificateCheck out;
  if (systems.empty()) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> xes(X);
  const double xnorm = xes.eigenvalues().cwiseAbs().maxCoeff();
  if (xes.eigenvalues().minCoeff() <= 0.0) return out;  // X must be PD

  for (int i = 0; i < static_cast<int>(systems.size()); ++i) {
    Matrix A_cl = systems[i].first + systems[i].second * K.K;
    Matrix dec = A_cl.transpose() * X * A_cl - X;
    Eigen::SelfAdjointEigenSolver<Matrix> es(dec);
    if (es.eigenvalues().maxCoeff() > -1e-9 * xnorm) {
      out.violating_vertex = i;
      return out;
    }
  }
  for (int t = 0; t < trials; ++t) {
    // uniform simplex weights via normalized exponentials
    Vector w(systems.size());
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w[i] = -std::log(1.0 - rng.uniform01());
    w /= w.sum();
    Matrix A = w[0] * systems[0].first;
    Matrix B = w[0] * systems[0].second;
    for (size_t i = 1; i < systems.size(); ++i) {
      A += w[i] * systems[i].first;
      B += w[i] * systems[i].second;
    }
    if (spectral_radius(A + B * K.K) >= 1.0) {
      out.violating_combo = t;
      return out;
    }
  }
  out.valid = true;
  return out;
}

RobustnessResult robustness_check(const GainPolicy& K,
                                  const FreshSampler& fresh_sampler,
                                  int n_fresh, Rng& rng) {
  if (n_fresh < 1) throw DimensionError("robustness_check: n_fresh < 1");
  std::vector<LinearSystem> fresh = fresh_sampler(n_fresh, rng);
  RobustnessResult out;
  out.n_samples = static_cast<int>(fresh.size());
  for (const auto& theta : fresh) {
    if (spectral_radius(theta.A + theta.B * K.K) >= 1.0) ++out.n_unstable;
  }
  out.unstable_fraction =
      out.n_samples > 0 ? static_cast<double>(out.n_unstable) / out.n_samples
                        : 0.0;
  return out;
}

}  // namespace bayeslqr
