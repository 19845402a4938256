#pragma once

// Shared random-instance generators for the test binaries.

#include <cmath>
#include <cstdint>

#include "taskcomm/bca.hpp"
#include "taskcomm/random.hpp"

namespace testsupport {

using namespace taskcomm;

struct Instance {
  SystemConfig cfg;
  GMModel gm;
  ChannelState ch;
  double eps2 = 1e-6;

  PrecodingContext context() const { return PrecodingContext(cfg, ch, gm, eps2); }
};

/// Unit-gain Rician channel with noise variance set from an SNR in dB (P_k = 1).
inline Instance make_instance(int devices, int classes, int dk, int nt, int nr, int slots,
                              double snr_db, int rank, std::uint64_t seed, double eps2 = 1e-6) {
  Instance in;
  in.cfg = SystemConfig::uniform(devices, classes, dk, nt, nr, slots, 1.0);
  in.cfg.eps2_precoding = eps2;
  in.gm = make_gm_model(in.cfg, rank, derive_seed(seed, 1));
  RicianParams p;
  p.pathloss_db = 0.0;
  in.ch = sample_channel(p, in.cfg, std::sqrt(std::pow(10.0, -snr_db / 10.0)), derive_seed(seed, 2));
  in.eps2 = eps2;
  return in;
}

/// Small instance with dimensions drawn from the seed: K <= 3, 2 <= D <= 8, O*N_r <= 8,
/// class subspaces of rank < D so the classes are distinguishable.
inline Instance random_small_instance(std::uint64_t seed, double snr_lo = -5.0, double snr_hi = 20.0) {
  Rng rng = make_rng(derive_seed(seed, 0));
  std::uniform_int_distribution<int> k(1, 3), j(2, 3), nt(1, 3);
  const int devices = k(rng);
  const int dk = std::uniform_int_distribution<int>(devices == 1 ? 2 : 1, 8 / devices)(rng);
  const int d = devices * dk;
  const int rank = std::uniform_int_distribution<int>(1, d - 1)(rng);
  const int slots = std::uniform_int_distribution<int>(1, 2)(rng);
  const int rx = std::uniform_int_distribution<int>(1, 8 / slots)(rng);
  const double snr = std::uniform_real_distribution<double>(snr_lo, snr_hi)(rng);
  return make_instance(devices, j(rng), dk, nt(rng), rx, slots, snr, rank, seed);
}

/// Random point of the ball ||v||^2 <= power, radius distributed over [0, sqrt(power)].
inline CVector random_ball_point(Eigen::Index n, double power, Rng& rng) {
  CVector v = complex_normal_matrix(n, 1, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = std::sqrt(power) * (u(rng) < 0.3 ? 1.0 : u(rng));
  return v * (r / v.norm());
}

}  // namespace testsupport
