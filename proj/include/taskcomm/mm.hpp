#pragma once

// Majorization-minimization V-step. The quadratic v^H N v is majorized by an
// isotropic quadratic with curvature eta >= lambda_max(N); each surrogate is
// minimized over the power ball in closed form (a scaled projection), so no
// matrix inverse or Lagrange multiplier is needed.

#include <cmath>
#include <vector>

#include "taskcomm/bca.hpp"

namespace taskcomm {

/// Curvature bound eta = max absolute row sum of N (>= lambda_max(N)).
inline double eta_bound(const CMatrix& n) { return max_abs_row_sum(n); }

/// Surrogate u(v | v_anchor) = eta ||v||^2 - 2 Re((b - (N - eta I) v_anchor)^H v)
///                             + v_anchor^H (eta I - N) v_anchor.
inline double mm_surrogate(const Qcqp& p, double eta, const CVector& v, const CVector& anchor) {
  const CVector lin = p.b - (p.n * anchor - eta * anchor);
  const double tail = eta * anchor.squaredNorm() - anchor.dot(p.n * anchor).real();
  return eta * v.squaredNorm() - 2.0 * lin.dot(v).real() + tail;
}

/// q scaled by min(sqrt(P)/||q||, 1): the nearest point of the power ball.
inline CVector project_to_ball(const CVector& q, double power) {
  const double nq = q.norm();
  if (nq == 0.0) return q;
  return q * std::min(std::sqrt(power) / nq, 1.0);
}

/// One surrogate minimization: q = (b - (N - eta M) v)/eta with M = I, then projection.
inline CVector mm_update(const CVector& b, const CMatrix& n, double eta, const CVector& v,
                         double power) {
  const CVector q = (b - n * v) / eta + v;
  return project_to_ball(q, power);
}

/// Runs `inner_iters` MM iterations from a feasible starting point.
inline CVector mm_v_step(const CVector& b, const CMatrix& n, double power, const CVector& v_init,
                         int inner_iters) {
  const double eta = eta_bound(n);
  if (eta == 0.0) {
    // N = 0: the linear objective is minimized on the sphere along b.
    return b.norm() == 0.0 ? CVector(CVector::Zero(b.size()))
                           : CVector(b * (std::sqrt(power) / b.norm()));
  }
  CVector v = v_init;
  for (int i = 0; i < inner_iters; ++i) v = mm_update(b, n, eta, v, power);
  return v;
}

struct MmOptions {
  int max_iters = 50;
  int inner_iters = 20;
  double tol = 1e-8;
};

/// V-step via MM, warm-started from each device's current precoder.
inline void mm_v_step_all(const PrecodingContext& ctx, BcaState& s, int inner_iters) {
  for (int k = 0; k < ctx.num_devices(); ++k) {
    const Qcqp p = assemble_qcqp(ctx, s.u, s.w, s.v, k);
    const CVector start = project_to_ball(ctx.to_qcqp(k, s.v.blocks[k]), s.v.budgets[k]);
    s.v.blocks[k] = ctx.from_qcqp(k, mm_v_step(p.b, p.n, s.v.budgets[k], start, inner_iters));
  }
}

inline BcaState bca_mm_solve(const PrecodingContext& ctx, const PrecoderSet& v_init,
                             const MmOptions& opts = {}) {
  return block_ascent(ctx, v_init, opts.max_iters, opts.tol,
                      [&](const PrecodingContext& c, BcaState& s) {
                        mm_v_step_all(c, s, opts.inner_iters);
                      });
}

}  // namespace taskcomm
