#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "bayeslqr/model.hpp"

namespace bayeslqr {

enum class PriorKind { flat, gaussian };
enum class PiPrior { jeffreys, none };

// Prior specification over theta = (A, B, Pi). The (A, B) block is
// parameterized as theta_AB = vec([A'; B']) (column-major), matching the
// regression form x_+ = [A B] [x; u] + w.
struct PosteriorSpec {
  std::optional<Matrix> known_pi;  // if set, Pi is fixed
  PriorKind prior = PriorKind::flat;
  Vector prior_mean;  // used when prior == gaussian
  Matrix prior_cov;   // SPD, used when prior == gaussian
  PiPrior pi_prior = PiPrior::jeffreys;  // used when Pi is unknown
};

struct GaussianPosterior {
  Vector mu;     // length n_x (n_x + n_u)
  Matrix Sigma;  // SPD
};

// M stabilizable draws from the c% confidence region of the posterior.
struct SampleSet {
  std::vector<LinearSystem> samples;
  double confidence = 0.0;
  std::vector<double> log_weights;  // log pi-bar per retained sample

  int size() const { return static_cast<int>(samples.size()); }
};

// Pack/unpack between (A, B) and theta_AB = vec([A'; B']).
Vector pack_ab(const Matrix& A, const Matrix& B);
std::pair<Matrix, Matrix> unpack_ab(const Vector& theta, int n_x, int n_u);

// Ordinary least squares over all transitions. Throws
// InsufficientExcitation when the stacked regressor is rank deficient.
std::pair<Matrix, Matrix> least_squares_estimate(const Dataset& data);

// Exact Gaussian posterior over theta_AB for known Pi:
//   Sigma = (sum_i D_i' Pi^{-1} D_i + prior precision)^{-1}
//   mu    = Sigma (sum_i D_i' Pi^{-1} x_+^i + prior precision * prior mean)
// with D_i = I_{n_x} (x) [x_-' u'].
GaussianPosterior posterior_gaussian_known_pi(const Dataset& data,
                                              const Matrix& Pi,
                                              const PosteriorSpec& spec);

// Gibbs sampler for unknown Pi: alternates the Gaussian conditional for
// (A, B) with an inverse-Wishart conditional for Pi (Phi = residual outer
// products; nu = n_triples under the Jeffreys prior, n_triples - n_x - 1
// without one). Returns post-burn-in, thinned draws.
std::vector<LinearSystem> gibbs_chain(const Dataset& data,
                                      const PosteriorSpec& spec,
                                      int iterations, int burn_in, int thin,
                                      Rng& rng);

// Internal Gibbs conditional, exposed for cross-checking against
// posterior_gaussian_known_pi: moments of (A, B) | Pi, data.
GaussianPosterior gibbs_ab_conditional(const Dataset& data, const Matrix& Pi,
                                       const PosteriorSpec& spec);

// log p(theta) + sum log N(x_t; A x_{t-1} + B u_{t-1}, Pi), up to the
// evidence constant.
double log_unnormalized_posterior(const LinearSystem& theta,
                                  const Dataset& data,
                                  const PosteriorSpec& spec);

inline constexpr int kDefaultPoolFactor = 20;
inline constexpr int kGibbsBurnIn = 1000;
inline constexpr int kGibbsThin = 10;

// Draws pool_size posterior samples, discards the (100-c)% with lowest
// log pi-bar, then discards unstabilizable samples and returns the first
// M survivors (in draw order). Throws InsufficientStabilizableSamples.
SampleSet sample_confidence_region(const Dataset& data,
                                   const PosteriorSpec& spec, double c, int M,
                                   int pool_size, Rng& rng);

// Reusable sampler configuration, e.g. for fresh robustness draws.
struct ConfidenceSampler {
  Dataset data;
  PosteriorSpec spec;
  double confidence = 95.0;
  int pool_factor = kDefaultPoolFactor;

  SampleSet operator()(int M, Rng& rng) const {
    return sample_confidence_region(data, spec, confidence, M,
                                    pool_factor * M, rng);
  }
};

}  // namespace bayeslqr
