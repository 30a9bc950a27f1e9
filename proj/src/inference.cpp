#include "bayeslqr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bayeslqr/errors.hpp"

namespace bayeslqr {

namespace {

struct RegressionStats {
  Matrix V;    // sum d d',        (p x p), p = n_x + n_u
  Matrix Sdx;  // sum d x_+',      (p x n_x)
  Matrix Sxx;  // sum x_+ x_+',    (n_x x n_x)
  int n = 0;
};

RegressionStats collect_stats(const Dataset& data) {
  const int p = data.n_x + data.n_u;
  RegressionStats s;
  s.V = Matrix::Zero(p, p);
  s.Sdx = Matrix::Zero(p, data.n_x);
  s.Sxx = Matrix::Zero(data.n_x, data.n_x);
  Vector d(p);
  for (const auto& roll : data.rollouts) {
    for (int t = 0; t < roll.transitions(); ++t) {
      d.head(data.n_x) = roll.x.row(t).transpose();
      d.tail(data.n_u) = roll.u.row(t).transpose();
      Vector xp = roll.x.row(t + 1).transpose();
      s.V.noalias() += d * d.transpose();
      s.Sdx.noalias() += d * xp.transpose();
      s.Sxx.noalias() += xp * xp.transpose();
      ++s.n;
    }
  }
  return s;
}

Matrix residual_scatter(const RegressionStats& s, const Matrix& Theta) {
  // Theta = [A B]; Phi = sum (x_+ - Theta d)(x_+ - Theta d)'
  Matrix TS = Theta * s.Sdx;
  Matrix Phi = s.Sxx - TS - TS.transpose() + Theta * s.V * Theta.transpose();
  return 0.5 * (Phi + Phi.transpose());
}

// Pi ~ IW(Phi, nu) via a Bartlett draw of Pi^{-1} ~ Wishart(Phi^{-1}, nu).
// Accepts singular PSD Phi (the degenerate zero-residual limit).
Matrix sample_inverse_wishart(const Matrix& Phi, double nu, Rng& rng) {
  const Eigen::Index p = Phi.rows();
  if (nu < static_cast<double>(p))
    throw NumericalError("inverse-Wishart: invalid degrees of freedom");
  Matrix Lphi = psd_cholesky(Phi, 1e-8);
  Matrix Abar = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    Abar(i, i) = std::sqrt(rng.chi_squared(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) Abar(i, j) = rng.gaussian();
  }
  // Pi = (L A^{-T})(L A^{-T})'
  Matrix M = Abar.triangularView<Eigen::Lower>()
                 .transpose()
                 .solve(Lphi.transpose())
                 .transpose();
  Matrix Pi = M * M.transpose();
  return 0.5 * (Pi + Pi.transpose());
}

Matrix prior_precision(const PosteriorSpec& spec, int dim) {
  if (spec.prior == PriorKind::flat) return Matrix::Zero(dim, dim);
  if (spec.prior_cov.rows() != dim || spec.prior_cov.cols() != dim ||
      spec.prior_mean.size() != dim)
    throw DimensionError("posterior: prior dimension mismatch");
  Eigen::LLT<Matrix> llt(spec.prior_cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("posterior: prior covariance not SPD");
  return llt.solve(Matrix::Identity(dim, dim));
}

GaussianPosterior finish_posterior(const Matrix& info, const Vector& h,
                                   const PosteriorSpec& spec) {
  const Eigen::Index dim = h.size();
  Matrix lambda = info;
  Vector rhs = h;
  if (spec.prior == PriorKind::gaussian) {
    Matrix p0 = prior_precision(spec, static_cast<int>(dim));
    lambda += p0;
    rhs += p0 * spec.prior_mean;
  }
  lambda = 0.5 * (lambda + lambda.transpose());
  Eigen::LLT<Matrix> llt(lambda);
  if (llt.info() != Eigen::Success)
    throw ImproperPosterior(
        "posterior: singular information matrix under flat prior");
  GaussianPosterior out;
  out.mu = llt.solve(rhs);
  out.Sigma = llt.solve(Matrix::Identity(dim, dim));
  out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
  return out;
}

}  // namespace

Vector pack_ab(const Matrix& A, const Matrix& B) {
  const int nx = static_cast<int>(A.rows());
  const int nu = static_cast<int>(B.cols());
  const int p = nx + nu;
  Matrix W(p, nx);
  W.topRows(nx) = A.transpose();
  W.bottomRows(nu) = B.transpose();
  return Eigen::Map<const Vector>(W.data(), p * nx);
}

std::pair<Matrix, Matrix> unpack_ab(const Vector& theta, int n_x, int n_u) {
  const int p = n_x + n_u;
  if (theta.size() != p * n_x) throw DimensionError("unpack_ab: size");
  Matrix W = Eigen::Map<const Matrix>(theta.data(), p, n_x);
  return {W.topRows(n_x).transpose(), W.bottomRows(n_u).transpose()};
}

std::pair<Matrix, Matrix> least_squares_estimate(const Dataset& data) {
  const int p = data.n_x + data.n_u;
  const int n = data.n_triples();
  Matrix Z(n, p);
  Matrix Y(n, data.n_x);
  int row = 0;
  for (const auto& roll : data.rollouts) {
    for (int t = 0; t < roll.transitions(); ++t) {
      Z.block(row, 0, 1, data.n_x) = roll.x.row(t);
      Z.block(row, data.n_x, 1, data.n_u) = roll.u.row(t);
      Y.row(row) = roll.x.row(t + 1);
      ++row;
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < p)
    throw InsufficientExcitation(
        "least_squares_estimate: regressor matrix is rank deficient "
        "(insufficient excitation)");
  Matrix Wt = qr.solve(Y);  // p x n_x, equals [A'; B']
  return {Wt.topRows(data.n_x).transpose(),
          Wt.bottomRows(data.n_u).transpose()};
}

GaussianPosterior posterior_gaussian_known_pi(const Dataset& data,
                                              const Matrix& Pi,
                                              const PosteriorSpec& spec) {
  const int nx = data.n_x;
  const int p = nx + data.n_u;
  const int dim = nx * p;
  if (Pi.rows() != nx || Pi.cols() != nx)
    throw DimensionError("posterior: Pi dimension mismatch");
  Eigen::LLT<Matrix> pillt(Pi);
  if (pillt.info() != Eigen::Success)
    throw SingularCovariance("posterior: Pi not positive definite");
  Matrix Pinv = pillt.solve(Matrix::Identity(nx, nx));

  // Literal accumulation of D_i' Pi^{-1} D_i with D_i = I (x) [x' u'].
  Matrix info = Matrix::Zero(dim, dim);
  Vector h = Vector::Zero(dim);
  Matrix D = Matrix::Zero(nx, dim);
  for (const auto& roll : data.rollouts) {
    for (int t = 0; t < roll.transitions(); ++t) {
      D.setZero();
      for (int j = 0; j < nx; ++j) {
        D.block(j, j * p, 1, nx) = roll.x.row(t);
        D.block(j, j * p + nx, 1, data.n_u) = roll.u.row(t);
      }
      info.noalias() += D.transpose() * Pinv * D;
      h.noalias() += D.transpose() * (Pinv * roll.x.row(t + 1).transpose());
    }
  }
  return finish_posterior(info, h, spec);
}

GaussianPosterior gibbs_ab_conditional(const Dataset& data, const Matrix& Pi,
                                       const PosteriorSpec& spec) {
  const int nx = data.n_x;
  const int p = nx + data.n_u;
  RegressionStats s = collect_stats(data);
  Eigen::LLT<Matrix> pillt(Pi);
  if (pillt.info() != Eigen::Success)
    throw SingularCovariance("gibbs: Pi not positive definite");
  Matrix Pinv = pillt.solve(Matrix::Identity(nx, nx));

  // info = Pi^{-1} (x) V, h = vec(Sdx Pi^{-1}); the Kronecker-structured
  // route, deliberately distinct from posterior_gaussian_known_pi.
  Matrix info(nx * p, nx * p);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nx; ++j)
      info.block(i * p, j * p, p, p) = Pinv(i, j) * s.V;
  Matrix HM = s.Sdx * Pinv;  // p x nx
  Vector h = Eigen::Map<const Vector>(HM.data(), nx * p);
  return finish_posterior(info, h, spec);
}

double log_unnormalized_posterior(const LinearSystem& theta,
                                  const Dataset& data,
                                  const PosteriorSpec& spec) {
  const int nx = data.n_x;
  if (theta.nx() != nx || theta.nu() != data.n_u)
    throw DimensionError("log_unnormalized_posterior: dimension mismatch");
  Eigen::LLT<Matrix> llt(theta.Pi);
  if (llt.info() != Eigen::Success)
    throw SingularCovariance("log_unnormalized_posterior: singular Pi");
  const Matrix& L = llt.matrixLLT();
  double logdet = 0.0;
  for (int i = 0; i < nx; ++i) logdet += 2.0 * std::log(L(i, i));

  double lp = 0.0;
  int n = 0;
  for (const auto& roll : data.rollouts) {
    for (int t = 0; t < roll.transitions(); ++t) {
      Vector r = roll.x.row(t + 1).transpose() -
                 theta.A * roll.x.row(t).transpose() -
                 theta.B * roll.u.row(t).transpose();
      lp -= 0.5 * r.dot(llt.solve(r));
      ++n;
    }
  }
  lp -= 0.5 * n * (nx * std::log(2.0 * M_PI) + logdet);

  if (spec.prior == PriorKind::gaussian) {
    Vector d = pack_ab(theta.A, theta.B) - spec.prior_mean;
    Eigen::LLT<Matrix> pl(spec.prior_cov);
    if (pl.info() != Eigen::Success)
      throw NumericalError("log_unnormalized_posterior: prior cov not SPD");
    double pd = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i)
      pd += 2.0 * std::log(pl.matrixLLT()(i, i));
    lp -= 0.5 * (d.dot(pl.solve(d)) + pd + d.size() * std::log(2.0 * M_PI));
  }
  if (!spec.known_pi && spec.pi_prior == PiPrior::jeffreys) {
    lp -= 0.5 * (nx + 1) * logdet;
  }
  return lp;
}

std::vector<LinearSystem> gibbs_chain(const Dataset& data,
                                      const PosteriorSpec& spec,
                                      int iterations, int burn_in, int thin,
                                      Rng& rng) {
  if (spec.known_pi)
    throw DimensionError("gibbs_chain: Pi is declared known");
  if (thin < 1 || burn_in < 0 || iterations <= burn_in)
    throw DimensionError("gibbs_chain: invalid schedule");
  const int nx = data.n_x;
  const int p = nx + data.n_u;
  RegressionStats s = collect_stats(data);
  if (s.n < 1) throw DimensionError("gibbs_chain: no transitions");

  const double nu = spec.pi_prior == PiPrior::jeffreys
                        ? static_cast<double>(s.n)
                        : static_cast<double>(s.n - nx - 1);
  if (nu < static_cast<double>(nx))
    throw NumericalError("gibbs_chain: invalid inverse-Wishart dof");

  Eigen::LLT<Matrix> vllt(s.V);
  if (spec.prior == PriorKind::flat && vllt.info() != Eigen::Success)
    throw ImproperPosterior("gibbs_chain: singular regressor moment matrix");

  std::vector<LinearSystem> draws;
  draws.reserve((iterations - burn_in) / thin + 1);
  Matrix Pi = Matrix::Identity(nx, nx);
  for (int k = 1; k <= iterations; ++k) {
    // (A, B) | Pi
    Matrix A, B;
    if (spec.prior == PriorKind::flat) {
      Matrix mean_w = vllt.solve(s.Sdx);  // p x nx, [A'; B']
      Matrix Gpi = psd_cholesky(Pi, 1e-8);
      Matrix Z = rng.gaussian_matrix(p, nx);
      Matrix dev = vllt.matrixU().solve(Z) * Gpi.transpose();
      Matrix W = mean_w + dev;
      A = W.topRows(nx).transpose();
      B = W.bottomRows(data.n_u).transpose();
    } else {
      GaussianPosterior cond = gibbs_ab_conditional(data, Pi, spec);
      Matrix Lc = psd_cholesky(cond.Sigma, 1e-8);
      Vector theta = cond.mu + Lc * rng.gaussian_vector(cond.mu.size());
      std::tie(A, B) = unpack_ab(theta, nx, data.n_u);
    }
    // Pi | (A, B)
    Matrix Theta(nx, p);
    Theta.leftCols(nx) = A;
    Theta.rightCols(data.n_u) = B;
    Matrix Phi = residual_scatter(s, Theta);
    Pi = sample_inverse_wishart(Phi, nu, rng);

    if (k > burn_in && (k - burn_in) % thin == 0) {
      draws.emplace_back(A, B, Pi);
    }
  }
  return draws;
}

SampleSet sample_confidence_region(const Dataset& data,
                                   const PosteriorSpec& spec, double c, int M,
                                   int pool_size, Rng& rng) {
  if (c <= 0.0 || c > 100.0)
    throw DimensionError("sample_confidence_region: c out of (0, 100]");
  if (M < 1 || pool_size < M)
    throw DimensionError("sample_confidence_region: pool_size < M");

  std::vector<LinearSystem> pool;
  pool.reserve(pool_size);
  if (spec.known_pi) {
    const Matrix& Pi = *spec.known_pi;
    GaussianPosterior post = posterior_gaussian_known_pi(data, Pi, spec);
    Matrix L = psd_cholesky(post.Sigma, 1e-8);
    for (int i = 0; i < pool_size; ++i) {
      Vector theta = post.mu + L * rng.gaussian_vector(post.mu.size());
      auto [A, B] = unpack_ab(theta, data.n_x, data.n_u);
      pool.emplace_back(std::move(A), std::move(B), Pi);
    }
  } else {
    pool = gibbs_chain(data, spec, kGibbsBurnIn + kGibbsThin * pool_size,
                       kGibbsBurnIn, kGibbsThin, rng);
    pool.resize(pool_size, pool.back());
  }

  std::vector<double> logw(pool.size());
  for (size_t i = 0; i < pool.size(); ++i)
    logw[i] = log_unnormalized_posterior(pool[i], data, spec);

  // discard the (100-c)% of samples with the lowest unnormalized posterior
  const int n_cut = static_cast<int>(
      std::ceil((100.0 - c) * static_cast<double>(pool_size) / 100.0 - 1e-9));
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return logw[a] < logw[b]; });
  std::vector<bool> discarded(pool.size(), false);
  for (int i = 0; i < n_cut; ++i) discarded[order[i]] = true;

  SampleSet out;
  out.confidence = c;
  int survivors = 0;
  for (size_t i = 0; i < pool.size(); ++i) {
    if (discarded[i]) continue;
    if (!is_stabilizable(pool[i].A, pool[i].B)) continue;
    ++survivors;
    if (out.size() < M) {
      out.samples.push_back(pool[i]);
      out.log_weights.push_back(logw[i]);
    }
  }
  if (out.size() < M)
    throw InsufficientStabilizableSamples(
        "sample_confidence_region: only " + std::to_string(survivors) +
            " stabilizable samples survive the weight cut, need " +
            std::to_string(M),
        survivors);
  return out;
}

}  // namespace bayeslqr
