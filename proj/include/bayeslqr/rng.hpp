#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace bayeslqr {

// 64-bit FNV-1a, used to derive per-task seeds from labels.
inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_combine(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t root, const Parts&... parts) {
  std::uint64_t h = hash_combine(kFnvOffset, root);
  ((h = hash_combine(h, parts)), ...);
  return h;
}

// Deterministic random source. Gaussian draws use Box-Muller on top of
// mt19937_64 instead of std::normal_distribution, whose output is
// implementation-defined; this keeps streams identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  double uniform01() { return (engine_() >> 11) * 0x1.0p-53; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gaussian();
    return m;
  }

  double chi_squared(double dof) {
    // Marsaglia-Tsang gamma sampler, shape dof/2, scale 2.
    double k = dof / 2.0;
    double boost = 1.0;
    if (k < 1.0) {
      double u = uniform01();
      boost = std::pow(u == 0.0 ? 0.5 : u, 1.0 / k);
      k += 1.0;
    }
    double d = k - 1.0 / 3.0;
    double cc = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = gaussian();
      double v = 1.0 + cc * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform01();
      if (u == 0.0) continue;
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
        return 2.0 * boost * d * v;
    }
  }

  std::uint64_t raw() { return engine_(); }

  template <typename... Parts>
  Rng derive(const Parts&... parts) const {
    return Rng(derive_seed(seed_, parts...));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bayeslqr
