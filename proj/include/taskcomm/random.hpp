#pragma once

#include <cstdint>
#include <random>

#include "taskcomm/numerics.hpp"

namespace taskcomm {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `stream` of parent `seed`. Pure function of both.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }

/// Standard circularly-symmetric complex Gaussian CN(0, 1).
inline cd complex_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

inline CMatrix complex_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  CMatrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = complex_normal(rng);
  return m;
}

/// Random Hermitian positive definite matrix with eigenvalues in [floor, floor + 1 + ...].
inline CMatrix random_hpd(Eigen::Index n, Rng& rng, double floor = 0.1) {
  CMatrix g = complex_normal_matrix(n, n, rng);
  CMatrix a = g * g.adjoint() / static_cast<double>(n);
  a += floor * CMatrix::Identity(n, n);
  return hermitian_part(a);
}

}  // namespace taskcomm
