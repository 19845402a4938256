#pragma once

// Block coordinate ascent for rate-reduction precoding.
//
// The log-det objective is rewritten with auxiliary receive filter U and
// weights {W_j} (a WMMSE-style lifting). U and W have closed-form updates;
// each device's precoder is then the solution of a ball-constrained convex
// QCQP in the whitened variable v_k = D_k vec(V_k), solved exactly by a
// bisection on its Lagrange multiplier.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "taskcomm/mcr2.hpp"
#include "taskcomm/model.hpp"

namespace taskcomm {

/// Everything about one (config, channel, feature statistics) instance that
/// stays fixed while the precoders move.
class PrecodingContext {
 public:
  PrecodingContext(SystemConfig cfg, ChannelState ch, GMModel gm, double eps2)
      : cfg_(std::move(cfg)), ch_(std::move(ch)), gm_(std::move(gm)), eps2_(eps2) {
    cfg_.validate();
    if (ch_.num_devices() != cfg_.num_devices)
      throw DimensionMismatch("channel has " + std::to_string(ch_.num_devices()) +
                              " devices, config has " + std::to_string(cfg_.num_devices));
    if (gm_.dim() != cfg_.total_feature_dim())
      throw DimensionMismatch("feature statistics dimension does not match config");
    if (ch_.rx_dim() != cfg_.rx_dim())
      throw DimensionMismatch("channel receive dimension does not match config");
    const auto c = precoding_constants(ch_, eps2_);
    alpha_ = c.alpha;
    gamma_ = c.gamma;
    sigma_sqrt_ = matrix_sqrt_psd(gm_.global_cov);
    for (int k = 0; k < cfg_.num_devices; ++k) {
      if (ch_.block(k).cols() != cfg_.tx_dim(k))
        throw DimensionMismatch("channel block " + std::to_string(k) + " has wrong width");
      build_whitening(k);
    }
  }

  const SystemConfig& config() const { return cfg_; }
  const ChannelState& channel() const { return ch_; }
  const GMModel& gm() const { return gm_; }
  double eps2() const { return eps2_; }
  double alpha() const { return alpha_; }
  double gamma() const { return gamma_; }
  int num_devices() const { return cfg_.num_devices; }
  int num_classes() const { return gm_.num_classes(); }
  int rx_dim() const { return ch_.rx_dim(); }
  int feature_dim() const { return gm_.dim(); }
  /// Dimension of v_k: D_k * O * N_t,k.
  int qcqp_dim(int k) const { return cfg_.feature_dims[k] * cfg_.tx_dim(k); }

  /// Sigma^{1/2}.
  const CMatrix& sigma_sqrt() const { return sigma_sqrt_; }
  CMatrix sigma_block(int q, int k) const { return GMModel::block(gm_.global_cov, cfg_, q, k); }
  CMatrix class_block(int j, int q, int k) const {
    return GMModel::block(gm_.class_covs[j], cfg_, q, k);
  }
  /// D_k = ((Sigma^(kk))^T kron I)^{1/2} and its inverse.
  const CMatrix& whitening(int k) const { return whiten_[k]; }
  const CMatrix& whitening_inv(int k) const { return whiten_inv_[k]; }

  CVector to_qcqp(int k, const CMatrix& vk) const { return whiten_[k] * vec(vk); }
  CMatrix from_qcqp(int k, const CVector& v) const {
    return devec(whiten_inv_[k] * v, cfg_.tx_dim(k), cfg_.feature_dims[k]);
  }

 private:
  void build_whitening(int k) {
    CMatrix skk = hermitian_part(sigma_block(k, k));
    const double tr = skk.trace().real();
    const int dk = cfg_.feature_dims[k];
    if (!(tr > 0.0)) throw SingularFeatureBlock(k);
    const double floor = 1e-10 * tr / dk;
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(skk.transpose().eval());
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    RVector lam = eig.eigenvalues();
    if (lam.minCoeff() < floor) lam.array() += floor;
    lam = lam.cwiseMax(floor);
    const CMatrix& q = eig.eigenvectors();
    const CMatrix root = q * lam.cwiseSqrt().cast<cd>().asDiagonal() * q.adjoint();
    const CMatrix root_inv = q * lam.cwiseSqrt().cwiseInverse().cast<cd>().asDiagonal() * q.adjoint();
    const CMatrix eye = CMatrix::Identity(cfg_.tx_dim(k), cfg_.tx_dim(k));
    whiten_.push_back(kron(root, eye));
    whiten_inv_.push_back(kron(root_inv, eye));
  }

  SystemConfig cfg_;
  ChannelState ch_;
  GMModel gm_;
  double eps2_;
  double alpha_ = 0.0;
  double gamma_ = 1.0;
  CMatrix sigma_sqrt_;
  std::vector<CMatrix> whiten_;
  std::vector<CMatrix> whiten_inv_;
};

/// F_0 = gamma I + alpha HV Sigma (HV)^H and the per-class F_j, plus HV itself.
struct CovarianceTerms {
  CMatrix hv;
  CMatrix f0;
  std::vector<CMatrix> fj;
};

inline CovarianceTerms compute_F(const PrecodingContext& ctx, const PrecoderSet& v) {
  CovarianceTerms t;
  t.hv = ctx.channel().assembled() * v.assembled();
  const Eigen::Index n = t.hv.rows();
  const CMatrix g = ctx.gamma() * CMatrix::Identity(n, n);
  t.f0 = g + ctx.alpha() * hermitian_part(t.hv * ctx.gm().global_cov * t.hv.adjoint());
  for (const auto& sj : ctx.gm().class_covs)
    t.fj.push_back(g + ctx.alpha() * hermitian_part(t.hv * sj * t.hv.adjoint()));
  return t;
}

/// Rate-reduction objective log det F_0 - sum_j p_j log det F_j.
inline double p4_objective(const PrecodingContext& ctx, const PrecoderSet& v) {
  const CovarianceTerms t = compute_F(ctx, v);
  std::vector<double> per_class;
  for (const auto& f : t.fj) per_class.push_back(logdet_hpd(f));
  return rate_reduction(logdet_hpd(t.f0), per_class, ctx.gm().priors);
}

/// U = alpha F_0^{-1} H V Sigma^{1/2}.
inline CMatrix u_step(const PrecodingContext& ctx, const CovarianceTerms& t) {
  return ctx.alpha() * hermitian_solve(t.f0, t.hv * ctx.sigma_sqrt());
}

/// E_0 = (I - U^H HV Sigma^{1/2})(.)^H + (gamma/alpha) U^H U.
inline CMatrix compute_E0(const PrecodingContext& ctx, const CMatrix& u, const CMatrix& hv) {
  const Eigen::Index d = ctx.feature_dim();
  const CMatrix e = CMatrix::Identity(d, d) - u.adjoint() * hv * ctx.sigma_sqrt();
  return hermitian_part(e * e.adjoint() + (ctx.gamma() / ctx.alpha()) * u.adjoint() * u);
}

struct WeightSet {
  CMatrix w0;
  std::vector<CMatrix> wj;
};

/// W_0 = E_0^{-1}, W_j = F_j^{-1}.
inline WeightSet w_step(const PrecodingContext& ctx, const CMatrix& u, const CovarianceTerms& t) {
  WeightSet w;
  w.w0 = hermitian_part(hermitian_inverse(compute_E0(ctx, u, t.hv)));
  for (const auto& f : t.fj) w.wj.push_back(hermitian_part(hermitian_inverse(f)));
  return w;
}

/// Lifted objective log det W_0 - tr(W_0 E_0) + sum_j p_j (log det W_j - tr(W_j F_j)).
inline double p5_objective(const PrecodingContext& ctx, const CMatrix& u, const WeightSet& w,
                           const PrecoderSet& v) {
  const CovarianceTerms t = compute_F(ctx, v);
  const CMatrix e0 = compute_E0(ctx, u, t.hv);
  double value = logdet_hpd(w.w0) - (w.w0 * e0).trace().real();
  for (int j = 0; j < ctx.num_classes(); ++j)
    value += ctx.gm().priors[j] * (logdet_hpd(w.wj[j]) - (w.wj[j] * t.fj[j]).trace().real());
  return value;
}

/// Standard-form QCQP data for one device: minimize -2 Re(b^H v) + v^H N v.
struct Qcqp {
  CVector b;
  CMatrix n;
};

/// Builds (b_k, N_k) from the current U, W and the other devices' precoders.
inline Qcqp assemble_qcqp(const PrecodingContext& ctx, const CMatrix& u, const WeightSet& w,
                          const PrecoderSet& v, int k) {
  const SystemConfig& cfg = ctx.config();
  const ChannelState& ch = ctx.channel();
  const CMatrix& hk = ch.block(k);
  const double alpha = ctx.alpha();
  const int dk = cfg.feature_dims[k];
  const int rx = ctx.rx_dim();

  const CMatrix s_rows = ctx.sigma_sqrt().middleRows(cfg.feature_offset(k), dk);
  const CMatrix uw0 = u * w.w0;
  const CMatrix g0 = hk.adjoint() * uw0 * u.adjoint();  // H_k^H U W_0 U^H

  CMatrix cross = CMatrix::Zero(rx, dk);
  std::vector<CMatrix> cross_j(ctx.num_classes(), CMatrix::Zero(rx, dk));
  for (int q = 0; q < cfg.num_devices; ++q) {
    if (q == k) continue;
    const CMatrix hq_vq = ch.block(q) * v.blocks[q];
    cross += hq_vq * ctx.sigma_block(q, k);
    for (int j = 0; j < ctx.num_classes(); ++j) cross_j[j] += hq_vq * ctx.class_block(j, q, k);
  }

  CMatrix bt = hk.adjoint() * uw0 * s_rows.adjoint() - g0 * cross;
  for (int j = 0; j < ctx.num_classes(); ++j)
    bt -= alpha * ctx.gm().priors[j] * hk.adjoint() * w.wj[j] * cross_j[j];

  CMatrix nt = kron(ctx.sigma_block(k, k).transpose(), g0 * hk);
  for (int j = 0; j < ctx.num_classes(); ++j)
    nt += alpha * ctx.gm().priors[j] *
          kron(ctx.class_block(j, k, k).transpose(), hk.adjoint() * w.wj[j] * hk);

  const CMatrix& dinv = ctx.whitening_inv(k);
  Qcqp out;
  out.b = dinv * vec(bt);
  out.n = hermitian_part(dinv * nt * dinv);
  return out;
}

/// -2 Re(b^H v) + v^H N v.
inline double qcqp_objective(const Qcqp& p, const CVector& v) {
  return -2.0 * p.b.dot(v).real() + v.dot(p.n * v).real();
}

struct QcqpSolution {
  CVector v;
  double lambda = 0.0;
};

/// Exact solution of min -2Re(b^H v) + v^H N v s.t. ||v||^2 <= P via
/// eigendecomposition of N and bisection on the multiplier.
inline QcqpSolution v_step_bisection(const CVector& b, const CMatrix& n, double power) {
  QcqpSolution sol;
  const Eigen::Index dim = b.size();
  if (b.squaredNorm() == 0.0) {
    sol.v = CVector::Zero(dim);
    return sol;
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(n);
  if (eig.info() != Eigen::Success) throw NumericError("QCQP eigendecomposition failed");
  const RVector lam = eig.eigenvalues().cwiseMax(0.0);
  const CVector c = eig.eigenvectors().adjoint() * b;
  const RVector c2 = c.cwiseAbs2();
  const double lam_max = std::max(lam.maxCoeff(), 0.0);
  const double null_tol = 1e-13 * lam_max;
  const double c_tol = 1e-24 * c2.sum();

  auto norm2 = [&](double mu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double den = lam(i) + mu;
      if (den <= null_tol) {
        if (c2(i) > c_tol) return std::numeric_limits<double>::infinity();
        continue;
      }
      s += c2(i) / (den * den);
    }
    return s;
  };
  auto solve = [&](double mu) {
    CVector y(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double den = lam(i) + mu;
      y(i) = den <= null_tol ? cd(0.0) : c(i) / den;
    }
    return CVector(eig.eigenvectors() * y);
  };

  if (norm2(0.0) <= power) {
    sol.v = solve(0.0);
    sol.lambda = 0.0;
    return sol;
  }
  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (!(norm2(hi) < power)) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 200) throw BisectionFailed("no multiplier bracket within 200 doublings");
  }
  // hi always stays on the feasible side.
  for (int it = 0; it < 4000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    const double n2 = norm2(mid);
    if (n2 > power) {
      lo = mid;
    } else {
      hi = mid;
      if (power - n2 <= 1e-12 * power) break;
    }
  }
  sol.lambda = hi;
  sol.v = solve(hi);
  return sol;
}

struct BcaOptions {
  int max_iters = 50;
  double tol = 1e-8;
};

struct BcaState {
  CMatrix u;
  WeightSet w;
  PrecoderSet v;
  std::vector<double> multipliers;
  /// trace[0] is the objective at V_init, trace[i] after the i-th full iteration.
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

/// One U-step and W-step at the current precoders.
inline void refresh_auxiliaries(const PrecodingContext& ctx, BcaState& s) {
  const CovarianceTerms t = compute_F(ctx, s.v);
  s.u = u_step(ctx, t);
  s.w = w_step(ctx, s.u, t);
}

/// Exact V-step: sequential (Gauss-Seidel) device updates.
inline void bca_v_step(const PrecodingContext& ctx, BcaState& s) {
  s.multipliers.assign(ctx.num_devices(), 0.0);
  for (int k = 0; k < ctx.num_devices(); ++k) {
    const Qcqp p = assemble_qcqp(ctx, s.u, s.w, s.v, k);
    const QcqpSolution sol = v_step_bisection(p.b, p.n, s.v.budgets[k]);
    s.v.blocks[k] = ctx.from_qcqp(k, sol.v);
    s.multipliers[k] = sol.lambda;
  }
}

inline bool relative_change_below(double prev, double cur, double tol) {
  return std::abs(cur - prev) <= tol * std::max(std::abs(prev), std::numeric_limits<double>::min());
}

template <typename VStep>
BcaState block_ascent(const PrecodingContext& ctx, const PrecoderSet& v_init, int max_iters,
                      double tol, VStep&& v_step) {
  BcaState s;
  s.v = v_init;
  s.objective_trace.push_back(p4_objective(ctx, s.v));
  for (int it = 0; it < max_iters; ++it) {
    refresh_auxiliaries(ctx, s);
    v_step(ctx, s);
    s.objective_trace.push_back(p4_objective(ctx, s.v));
    s.iterations = it + 1;
    const auto n = s.objective_trace.size();
    if (relative_change_below(s.objective_trace[n - 2], s.objective_trace[n - 1], tol)) {
      s.converged = true;
      break;
    }
  }
  return s;
}

inline BcaState bca_solve(const PrecodingContext& ctx, const PrecoderSet& v_init,
                          const BcaOptions& opts = {}) {
  return block_ascent(ctx, v_init, opts.max_iters, opts.tol, bca_v_step);
}

}  // namespace taskcomm
