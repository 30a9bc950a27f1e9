#include "bayeslqr/model.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bayeslqr/errors.hpp"

namespace bayeslqr {

Matrix psd_cholesky(const Matrix& P, double tol_rel) {
  const Eigen::Index n = P.rows();
  if (P.cols() != n) throw DimensionError("psd_cholesky: matrix not square");
  const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
  const double pivot_tol = 1e-13 * scale;

  Matrix L = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = P(j, j) - L.row(j).head(j).squaredNorm();
    if (d > pivot_tol) {
      L(j, j) = std::sqrt(d);
      for (Eigen::Index i = j + 1; i < n; ++i) {
        L(i, j) = (P(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
      }
    }
    // else: zero pivot, column stays zero (rank-deficient PSD input)
  }
  double err = (L * L.transpose() - P).cwiseAbs().maxCoeff();
  if (err > tol_rel * scale) {
    throw NumericalError("psd_cholesky: input is not positive semidefinite");
  }
  return L;
}

LinearSystem::LinearSystem(Matrix A_, Matrix B_, Matrix Pi_)
    : A(std::move(A_)), B(std::move(B_)), Pi(std::move(Pi_)) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n) throw DimensionError("LinearSystem: A not square");
  if (B.rows() != n) throw DimensionError("LinearSystem: B row mismatch");
  if (Pi.rows() != n || Pi.cols() != n)
    throw DimensionError("LinearSystem: Pi dimension mismatch");
  if (!A.allFinite() || !B.allFinite() || !Pi.allFinite())
    throw DimensionError("LinearSystem: non-finite entries");

  const double pi_scale = std::max(1.0, Pi.cwiseAbs().maxCoeff());
  if ((Pi - Pi.transpose()).cwiseAbs().maxCoeff() > 1e-12 * pi_scale)
    throw DimensionError("LinearSystem: Pi not symmetric");
  Pi = 0.5 * (Pi + Pi.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(Pi);
  const double norm = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  if (es.eigenvalues().minCoeff() < -1e-10 * norm)
    throw DimensionError("LinearSystem: Pi not positive semidefinite");

  G = psd_cholesky(Pi);
}

Dataset::Dataset(int nx, int nu, std::vector<Rollout> r)
    : n_x(nx), n_u(nu), rollouts(std::move(r)) {
  if (n_x < 1 || n_u < 1) throw DimensionError("Dataset: dimensions < 1");
  for (const auto& roll : rollouts) {
    if (roll.x.cols() != n_x || roll.u.cols() != n_u)
      throw DimensionError("Dataset: rollout dimension mismatch");
    const auto dl = roll.x.rows() - roll.u.rows();
    if (dl != 0 && dl != 1)
      throw DimensionError("Dataset: state/input length mismatch");
    if (!roll.x.allFinite() || !roll.u.allFinite())
      throw DimensionError("Dataset: non-finite entries");
  }
  if (n_triples() < 1) throw DimensionError("Dataset: no transitions");
}

int Dataset::n_triples() const {
  int n = 0;
  for (const auto& r : rollouts) n += r.transitions();
  return n;
}

InputSource gaussian_input(int n_u) {
  return [n_u](int, Rng& rng) { return rng.gaussian_vector(n_u); };
}

InputSource zero_input(int n_u) {
  return [n_u](int, Rng&) { return Vector::Zero(n_u); };
}

LinearSystem make_toeplitz_system(int n_x) {
  if (n_x < 1) throw DimensionError("make_toeplitz_system: n_x < 1");
  Matrix A = Matrix::Zero(n_x, n_x);
  for (int i = 0; i < n_x; ++i) {
    A(i, i) = 1.01;
    if (i + 1 < n_x) {
      A(i, i + 1) = 0.01;
      A(i + 1, i) = 0.01;
    }
  }
  return LinearSystem(A, Matrix::Identity(n_x, n_x),
                      Matrix::Identity(n_x, n_x));
}

Rollout simulate_rollout(const LinearSystem& system, int T,
                         const InputSource& input, const Vector& x0,
                         Rng& rng) {
  if (T < 1) throw DimensionError("simulate_rollout: T < 1");
  const int nx = system.nx();
  const int nu = system.nu();
  if (x0.size() != nx) throw DimensionError("simulate_rollout: x0 size");

  Rollout roll;
  roll.x.resize(T + 1, nx);
  roll.u.resize(T + 1, nu);
  Vector x = x0;
  roll.x.row(0) = x.transpose();
  for (int t = 0; t < T; ++t) {
    Vector u = input(t, rng);
    if (u.size() != nu) throw DimensionError("simulate_rollout: input size");
    Vector w = system.G * rng.gaussian_vector(nx);
    roll.u.row(t) = u.transpose();
    x = system.A * x + system.B * u + w;
    roll.x.row(t + 1) = x.transpose();
  }
  roll.u.row(T) = input(T, rng).transpose();
  return roll;
}

double spectral_radius(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("spectral_radius: not square");
  if (!m.allFinite()) throw DimensionError("spectral_radius: non-finite");
  if (m.rows() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool is_stabilizable(const Matrix& A, const Matrix& B, double tol) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n)
    throw DimensionError("is_stabilizable: dimension mismatch");

  Eigen::EigenSolver<Matrix> es(A, /*computeEigenvectors=*/false);
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::complex<double> lambda = es.eigenvalues()[k];
    if (std::abs(lambda) < 1.0 - 1e-9) continue;
    Eigen::MatrixXcd pbh(n, n + B.cols());
    pbh.leftCols(n) = A.cast<std::complex<double>>();
    pbh.leftCols(n).diagonal().array() -= lambda;
    pbh.rightCols(B.cols()) = B.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pbh);
    const auto& sv = svd.singularValues();
    if (sv[n - 1] <= tol * sv[0]) return false;
  }
  return true;
}

}  // namespace bayeslqr
