#pragma once

// Simultaneous-perturbation stochastic approximation (SPSA). Each step draws
// one Rademacher direction for all coordinates and estimates the gradient
// from two loss evaluations, so the cost per step is independent of the
// parameter count.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "taskcomm/numerics.hpp"
#include "taskcomm/random.hpp"

namespace taskcomm {

struct SpsaOptions {
  int steps = 2000;
  /// Step gain a. Non-positive: calibrated so the first step moves each
  /// coordinate by about `initial_step`.
  double a = 0.0;
  double c = 0.05;
  /// Stability constant A. Negative: 10% of `steps`.
  double stability = -1.0;
  double alpha = 0.602;
  double gamma = 0.101;
  double initial_step = 0.05;
  int calibration_samples = 4;
  /// Evaluate the current iterate on the reference sample every this many steps
  /// and keep the best one seen.
  int eval_every = 10;
};

struct SpsaResult {
  RVector x;
  double initial_loss = 0.0;
  double best_loss = 0.0;
  int steps = 0;
  /// (step, reference loss) at each evaluation.
  std::vector<std::pair<int, double>> history;
};

/// loss(x, sample_seed). Both perturbed evaluations of one step get the same
/// sample seed (common random numbers). Reference evaluations use seed 0.
using SpsaLoss = std::function<double(const RVector&, std::uint64_t)>;

/// Minimizes `loss` from x0. The returned x is the best reference-evaluated
/// iterate, so best_loss <= initial_loss always holds.
inline SpsaResult spsa_minimize(const SpsaLoss& loss, const RVector& x0, const SpsaOptions& opt,
                                std::uint64_t seed) {
  SpsaResult res;
  res.x = x0;
  res.initial_loss = loss(x0, 0);
  res.best_loss = res.initial_loss;
  res.history.emplace_back(0, res.initial_loss);
  if (opt.steps <= 0 || x0.size() == 0) return res;

  Rng rng = make_rng(seed);
  std::bernoulli_distribution coin(0.5);
  auto rademacher = [&] {
    RVector d(x0.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = coin(rng) ? 1.0 : -1.0;
    return d;
  };
  auto sample_seed = [&](int t) { return derive_seed(seed, static_cast<std::uint64_t>(t) + 1); };

  const double big_a = opt.stability >= 0.0 ? opt.stability : 0.1 * opt.steps;
  double a = opt.a;
  if (!(a > 0.0)) {
    double g = 0.0;
    int used = 0;
    for (int s = 0; s < std::max(1, opt.calibration_samples); ++s) {
      const RVector d = rademacher();
      const std::uint64_t ss = derive_seed(seed, 0x5eedULL + static_cast<std::uint64_t>(s));
      const double diff = loss(x0 + opt.c * d, ss) - loss(x0 - opt.c * d, ss);
      if (std::isfinite(diff)) {
        g += std::abs(diff) / (2.0 * opt.c);
        ++used;
      }
    }
    g = used > 0 ? g / used : 0.0;
    a = g > 0.0 ? opt.initial_step * std::pow(big_a + 1.0, opt.alpha) / g : opt.initial_step;
  }

  RVector x = x0;
  for (int t = 1; t <= opt.steps; ++t) {
    const double at = a / std::pow(t + big_a, opt.alpha);
    const double ct = opt.c / std::pow(static_cast<double>(t), opt.gamma);
    const RVector d = rademacher();
    const std::uint64_t ss = sample_seed(t);
    const double diff = loss(x + ct * d, ss) - loss(x - ct * d, ss);
    if (std::isfinite(diff)) x -= at * (diff / (2.0 * ct)) * d;
    if (t % std::max(1, opt.eval_every) == 0 || t == opt.steps) {
      const double f = loss(x, 0);
      res.history.emplace_back(t, f);
      if (f < res.best_loss) {
        res.best_loss = f;
        res.x = x;
      }
    }
  }
  res.steps = opt.steps;
  return res;
}

}  // namespace taskcomm
