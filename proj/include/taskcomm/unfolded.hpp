#pragma once

// Deep-unfolded precoders. Each layer mirrors one outer iteration of BCA
// (vanilla variant) or BCA-MM (enhanced variant) with every matrix inverse
// replaced by the learnable approximator A^-1 ~ A^dag X1 + A X2 + X3, where
// A^dag is the reciprocal of the diagonal. The enhanced variant also learns
// the majorizer matrix of each MM sub-layer.
//
// Training is derivative-free (SPSA) on a reparameterized vector
// params = base + scale * theta, theta0 = 0, so one perturbation size fits
// parameter blocks whose natural magnitudes differ by many orders.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "taskcomm/bca.hpp"
#include "taskcomm/inference.hpp"
#include "taskcomm/mm.hpp"
#include "taskcomm/parallel.hpp"
#include "taskcomm/spsa.hpp"

namespace taskcomm {

struct InverseApproxParams {
  CMatrix xi1, xi2, xi3;

  static InverseApproxParams zeros(Eigen::Index n) {
    return {CMatrix::Zero(n, n), CMatrix::Zero(n, n), CMatrix::Zero(n, n)};
  }
  Eigen::Index dim() const { return xi1.rows(); }
};

/// diag(1/a_11, ..., 1/a_nn).
inline CMatrix diag_reciprocal(const CMatrix& a) {
  require_square(a, "diag_reciprocal argument");
  const Eigen::Index n = a.rows();
  const double floor = n > 0 ? 1e-14 * a.norm() / n : 0.0;
  CMatrix out = CMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(std::abs(a(i, i)) > floor))
      throw ZeroDiagonal("diagonal entry " + std::to_string(i) + " is numerically zero");
    out(i, i) = 1.0 / a(i, i);
  }
  return out;
}

/// A^dag X1 + A X2 + X3.
inline CMatrix inv_approx(const CMatrix& a, const InverseApproxParams& p) {
  require_square(a, "inv_approx argument");
  if (p.xi1.rows() != a.rows() || p.xi2.rows() != a.rows() || p.xi3.rows() != a.rows())
    throw DimensionMismatch("inv_approx: parameter dimension does not match the matrix");
  const CMatrix d = diag_reciprocal(a);
  return d.diagonal().asDiagonal() * p.xi1 + a * p.xi2 + p.xi3;
}

/// Generic inverse; the pseudo-inverse when A is singular.
inline CMatrix general_inverse(const CMatrix& a) {
  Eigen::CompleteOrthogonalDecomposition<CMatrix> cod(a);
  return cod.pseudoInverse();
}

/// X1 = 0, X2 = -A0^-2, X3 = 2 A0^-1: exact at A = A0.
inline InverseApproxParams taylor_anchor(const CMatrix& a0) {
  const CMatrix inv = general_inverse(a0);
  return {CMatrix::Zero(a0.rows(), a0.cols()), -inv * inv, 2.0 * inv};
}

/// Least-squares fit of (X1, X2, X3) to sum_n ||P_n X1 + Q_n X2 + X3 - T_n||_F^2,
/// minimum-norm in the column-scaled variables. With one sample the fit is exact.
inline InverseApproxParams fit_inverse_approx(const std::vector<CMatrix>& p,
                                              const std::vector<CMatrix>& q,
                                              const std::vector<CMatrix>& t) {
  if (p.empty() || p.size() != q.size() || p.size() != t.size())
    throw DimensionMismatch("fit_inverse_approx: need matching non-empty sample lists");
  const Eigen::Index n = p.front().rows();
  const auto count = static_cast<Eigen::Index>(p.size());
  auto rms = [&](const std::vector<CMatrix>& ms) {
    double s = 0.0;
    for (const auto& m : ms) s += m.squaredNorm();
    return std::sqrt(s / (static_cast<double>(ms.size()) * n));
  };
  const double sp = std::max(rms(p), 1e-300), sq = std::max(rms(q), 1e-300);
  CMatrix lhs(count * n, 3 * n), rhs(count * n, n);
  for (Eigen::Index i = 0; i < count; ++i) {
    lhs.block(i * n, 0, n, n) = p[i] / sp;
    lhs.block(i * n, n, n, n) = q[i] / sq;
    lhs.block(i * n, 2 * n, n, n) = CMatrix::Identity(n, n);
    rhs.middleRows(i * n, n) = t[i];
  }
  Eigen::CompleteOrthogonalDecomposition<CMatrix> cod(lhs);
  const CMatrix x = cod.solve(rhs);
  return {x.topRows(n) / sp, x.middleRows(n, n) / sq, x.bottomRows(n)};
}

enum class UnfoldedVariant { DuBca, DuBcaMm };

inline std::string variant_name(UnfoldedVariant v) {
  return v == UnfoldedVariant::DuBca ? "du-bca" : "du-bca-mm";
}

struct DuBcaLayerParams {
  InverseApproxParams theta;  // F_0, dim O N_r
  InverseApproxParams phi;    // E_0, dim D
  InverseApproxParams psi;    // F_j, shared by all classes
  std::vector<InverseApproxParams> omega;  // per device, dim D_k O N_t,k
  std::vector<cd> lambda;                  // per device
};

struct DuBcaMmLayerParams {
  InverseApproxParams theta;
  InverseApproxParams phi;
  InverseApproxParams psi;
  std::vector<std::vector<CMatrix>> upsilon;  // [device][sub-layer]
};

struct UnfoldedNet {
  UnfoldedVariant variant = UnfoldedVariant::DuBcaMm;
  SystemConfig config;
  int mm_sublayers = 2;
  std::vector<DuBcaLayerParams> bca_layers;   // filled for DuBca
  std::vector<DuBcaMmLayerParams> mm_layers;  // filled for DuBcaMm

  int num_layers() const {
    return static_cast<int>(variant == UnfoldedVariant::DuBca ? bca_layers.size() : mm_layers.size());
  }
};

inline int qcqp_dim(const SystemConfig& cfg, int k) { return cfg.feature_dims[k] * cfg.tx_dim(k); }

/// Zero-initialized net with the right shapes.
inline UnfoldedNet make_unfolded_net(UnfoldedVariant variant, const SystemConfig& cfg, int layers,
                                     int mm_sublayers = 2) {
  cfg.validate();
  if (layers < 0) throw DimensionMismatch("layer count must be >= 0");
  if (variant == UnfoldedVariant::DuBcaMm && mm_sublayers < 1)
    throw DimensionMismatch("MM sub-layer count must be >= 1");
  UnfoldedNet net;
  net.variant = variant;
  net.config = cfg;
  net.mm_sublayers = mm_sublayers;
  const int n = cfg.rx_dim(), d = cfg.total_feature_dim();
  for (int l = 0; l < layers; ++l) {
    if (variant == UnfoldedVariant::DuBca) {
      DuBcaLayerParams p{InverseApproxParams::zeros(n), InverseApproxParams::zeros(d),
                         InverseApproxParams::zeros(n), {}, {}};
      for (int k = 0; k < cfg.num_devices; ++k) {
        p.omega.push_back(InverseApproxParams::zeros(qcqp_dim(cfg, k)));
        p.lambda.push_back(0.0);
      }
      net.bca_layers.push_back(std::move(p));
    } else {
      DuBcaMmLayerParams p{InverseApproxParams::zeros(n), InverseApproxParams::zeros(d),
                           InverseApproxParams::zeros(n), {}};
      for (int k = 0; k < cfg.num_devices; ++k) {
        const int q = qcqp_dim(cfg, k);
        p.upsilon.emplace_back(mm_sublayers, CMatrix::Identity(q, q));
      }
      net.mm_layers.push_back(std::move(p));
    }
  }
  return net;
}

/// Calls f(cd* data, count) for every parameter block in a fixed order.
template <typename Net, typename F>
void visit_params(Net& net, F&& f) {
  auto approx = [&](auto& p) {
    f(p.xi1.data(), p.xi1.size());
    f(p.xi2.data(), p.xi2.size());
    f(p.xi3.data(), p.xi3.size());
  };
  for (auto& l : net.bca_layers) {
    approx(l.theta);
    approx(l.phi);
    approx(l.psi);
    for (std::size_t k = 0; k < l.omega.size(); ++k) {
      approx(l.omega[k]);
      f(&l.lambda[k], Eigen::Index{1});
    }
  }
  for (auto& l : net.mm_layers) {
    approx(l.theta);
    approx(l.phi);
    approx(l.psi);
    for (auto& per_device : l.upsilon)
      for (auto& u : per_device) f(u.data(), u.size());
  }
}

/// Number of complex parameters actually held by the net.
inline long parameter_count(const UnfoldedNet& net) {
  long n = 0;
  visit_params(net, [&](const cd*, Eigen::Index c) { n += c; });
  return n;
}

/// Per-layer count in the published summary table, which lists one matrix per
/// inverse approximator: 2 N^2 + D^2 + sum_k q_k^2 + K (vanilla) or
/// 2 N^2 + D^2 + I sum_k q_k^2 (enhanced), with N = O N_r, q_k = D_k O N_t,k.
inline long table_parameter_count(UnfoldedVariant variant, const SystemConfig& cfg, int mm_sublayers) {
  const long n = cfg.rx_dim(), d = cfg.total_feature_dim();
  long q2 = 0;
  for (int k = 0; k < cfg.num_devices; ++k) q2 += static_cast<long>(qcqp_dim(cfg, k)) * qcqp_dim(cfg, k);
  if (variant == UnfoldedVariant::DuBca) return 2 * n * n + d * d + q2 + cfg.num_devices;
  return 2 * n * n + d * d + mm_sublayers * q2;
}

/// Per-layer count held by this implementation (three matrices per approximator).
inline long layer_parameter_count(UnfoldedVariant variant, const SystemConfig& cfg, int mm_sublayers) {
  const long n = cfg.rx_dim(), d = cfg.total_feature_dim();
  long q2 = 0;
  for (int k = 0; k < cfg.num_devices; ++k) q2 += static_cast<long>(qcqp_dim(cfg, k)) * qcqp_dim(cfg, k);
  if (variant == UnfoldedVariant::DuBca) return 3 * (2 * n * n + d * d + q2) + cfg.num_devices;
  return 3 * (2 * n * n + d * d) + mm_sublayers * q2;
}

/// Real vector [re, im, re, im, ...] of all parameters.
inline RVector flatten(const UnfoldedNet& net) {
  RVector out(2 * parameter_count(net));
  Eigen::Index pos = 0;
  visit_params(net, [&](const cd* p, Eigen::Index c) {
    for (Eigen::Index i = 0; i < c; ++i) {
      out(pos++) = p[i].real();
      out(pos++) = p[i].imag();
    }
  });
  return out;
}

inline void unflatten(UnfoldedNet& net, const RVector& x) {
  if (x.size() != 2 * parameter_count(net))
    throw DimensionMismatch("unflatten: vector length does not match the net");
  Eigen::Index pos = 0;
  visit_params(net, [&](cd* p, Eigen::Index c) {
    for (Eigen::Index i = 0; i < c; ++i, pos += 2) p[i] = cd(x(pos), x(pos + 1));
  });
}

inline void check_net(const UnfoldedNet& net, const PrecodingContext& ctx) {
  const SystemConfig& a = net.config;
  const SystemConfig& b = ctx.config();
  if (a.num_devices != b.num_devices || a.feature_dims != b.feature_dims ||
      a.tx_antennas != b.tx_antennas || a.rx_antennas != b.rx_antennas || a.slots != b.slots)
    throw DimensionMismatch("unfolded net dimensions do not match the system config");
}

/// Rescales V_k onto the power boundary when it exceeds the budget.
inline CMatrix project_power(const CMatrix& vk, const CMatrix& sigma_kk, double budget) {
  const double p = (vk * sigma_kk * vk.adjoint()).trace().real();
  if (p > budget) return vk * std::sqrt(budget / p);
  return vk;
}

/// I learned MM sub-layers: q = (b - (N - eta Y_i) v)/eta, v = q min(sqrt(P)/||q||, 1).
inline CVector learned_mm_v_step(const CVector& b, const CMatrix& n, double power, const CVector& v_init,
                                 const std::vector<CMatrix>& upsilon) {
  const double eta = eta_bound(n);
  if (eta == 0.0) return mm_v_step(b, n, power, v_init, static_cast<int>(upsilon.size()));
  CVector v = v_init;
  for (const auto& y : upsilon) v = project_to_ball((b - n * v) / eta + y * v, power);
  return v;
}

/// Auxiliary variables of one layer computed with the learned inverses.
struct LayerAuxiliaries {
  CovarianceTerms terms;
  CMatrix u;
  CMatrix e0;
  WeightSet w;
};

inline LayerAuxiliaries learned_auxiliaries(const PrecodingContext& ctx, const PrecoderSet& v,
                                            const InverseApproxParams& theta,
                                            const InverseApproxParams& phi,
                                            const InverseApproxParams& psi) {
  LayerAuxiliaries a;
  a.terms = compute_F(ctx, v);
  a.u = ctx.alpha() * inv_approx(a.terms.f0, theta) * a.terms.hv * ctx.sigma_sqrt();
  a.e0 = compute_E0(ctx, a.u, a.terms.hv);
  a.w.w0 = inv_approx(a.e0, phi);
  for (const auto& f : a.terms.fj) a.w.wj.push_back(inv_approx(f, psi));
  return a;
}

/// Vanilla V-step of device k: v = ((N + lambda I)^dag O1 + N O2 + O3) b, then
/// the power projection.
inline void du_bca_v_update(const PrecodingContext& ctx, const Qcqp& q, const InverseApproxParams& omega,
                            cd lambda, int k, PrecoderSet& v) {
  CMatrix shifted = q.n;
  shifted.diagonal().array() += lambda;
  const CMatrix approx =
      diag_reciprocal(shifted).diagonal().asDiagonal() * omega.xi1 + q.n * omega.xi2 + omega.xi3;
  v.blocks[k] = project_power(ctx.from_qcqp(k, approx * q.b), ctx.sigma_block(k, k), v.budgets[k]);
}

inline void du_bca_mm_v_update(const PrecodingContext& ctx, const Qcqp& q,
                               const std::vector<CMatrix>& upsilon, int k, PrecoderSet& v) {
  const CVector start = project_to_ball(ctx.to_qcqp(k, v.blocks[k]), v.budgets[k]);
  v.blocks[k] = ctx.from_qcqp(k, learned_mm_v_step(q.b, q.n, v.budgets[k], start, upsilon));
}

/// Receives the matrices each layer inverts: (layer, role, device or class, matrix).
enum class InverseRole { F0, E0, Fj, Nk };
using LayerObserver = std::function<void(int, InverseRole, int, const CMatrix&)>;

inline void du_layer(const PrecodingContext& ctx, const DuBcaLayerParams& p, PrecoderSet& v,
                     int l = 0, const LayerObserver* obs = nullptr) {
  const LayerAuxiliaries a = learned_auxiliaries(ctx, v, p.theta, p.phi, p.psi);
  if (obs) {
    (*obs)(l, InverseRole::F0, 0, a.terms.f0);
    (*obs)(l, InverseRole::E0, 0, a.e0);
    for (std::size_t j = 0; j < a.terms.fj.size(); ++j) (*obs)(l, InverseRole::Fj, int(j), a.terms.fj[j]);
  }
  for (int k = 0; k < ctx.num_devices(); ++k) {
    const Qcqp q = assemble_qcqp(ctx, a.u, a.w, v, k);
    if (obs) (*obs)(l, InverseRole::Nk, k, q.n);
    du_bca_v_update(ctx, q, p.omega[k], p.lambda[k], k, v);
  }
}

inline void du_layer(const PrecodingContext& ctx, const DuBcaMmLayerParams& p, PrecoderSet& v,
                     int l = 0, const LayerObserver* obs = nullptr) {
  const LayerAuxiliaries a = learned_auxiliaries(ctx, v, p.theta, p.phi, p.psi);
  if (obs) {
    (*obs)(l, InverseRole::F0, 0, a.terms.f0);
    (*obs)(l, InverseRole::E0, 0, a.e0);
    for (std::size_t j = 0; j < a.terms.fj.size(); ++j) (*obs)(l, InverseRole::Fj, int(j), a.terms.fj[j]);
  }
  for (int k = 0; k < ctx.num_devices(); ++k) {
    const Qcqp q = assemble_qcqp(ctx, a.u, a.w, v, k);
    if (obs) (*obs)(l, InverseRole::Nk, k, q.n);
    du_bca_mm_v_update(ctx, q, p.upsilon[k], k, v);
  }
}

/// Runs all layers from v_init. Every returned precoder is power-feasible.
inline PrecoderSet du_forward(const UnfoldedNet& net, const PrecodingContext& ctx,
                              const PrecoderSet& v_init, const LayerObserver* obs = nullptr) {
  check_net(net, ctx);
  PrecoderSet v = v_init;
  for (std::size_t l = 0; l < net.bca_layers.size(); ++l) du_layer(ctx, net.bca_layers[l], v, int(l), obs);
  for (std::size_t l = 0; l < net.mm_layers.size(); ++l) du_layer(ctx, net.mm_layers[l], v, int(l), obs);
  return v;
}

inline PrecoderSet du_forward(const UnfoldedNet& net, const ChannelState& ch, const GMModel& gm,
                              double eps2, const PrecoderSet& v_init) {
  return du_forward(net, PrecodingContext(net.config, ch, gm, eps2), v_init);
}

/// Net whose every layer reproduces one base-algorithm iteration on this one
/// instance: Taylor anchors at the matrices the algorithm actually visits,
/// Y = I, and for the vanilla variant lambda_k = the bisection multipliers.
inline UnfoldedNet anchored_net(UnfoldedVariant variant, const PrecodingContext& ctx,
                                const PrecoderSet& v_init, int layers, int mm_sublayers = 2) {
  UnfoldedNet net = make_unfolded_net(variant, ctx.config(), layers, mm_sublayers);
  PrecoderSet v = v_init;
  for (int l = 0; l < layers; ++l) {
    const CovarianceTerms t = compute_F(ctx, v);
    const InverseApproxParams theta = taylor_anchor(t.f0);
    const CMatrix u = u_step(ctx, t);
    const CMatrix e0 = compute_E0(ctx, u, t.hv);
    const InverseApproxParams phi = taylor_anchor(e0);
    std::vector<CMatrix> p, q, target;
    for (const auto& f : t.fj) {
      p.push_back(diag_reciprocal(f));
      q.push_back(f);
      target.push_back(general_inverse(f));
    }
    const InverseApproxParams psi = fit_inverse_approx(p, q, target);
    BcaState s;
    s.v = v;
    s.u = u;
    s.w = w_step(ctx, u, t);
    if (variant == UnfoldedVariant::DuBca) {
      auto& layer = net.bca_layers[l];
      layer.theta = theta;
      layer.phi = phi;
      layer.psi = psi;
      for (int k = 0; k < ctx.num_devices(); ++k) {
        const Qcqp qc = assemble_qcqp(ctx, s.u, s.w, s.v, k);
        const QcqpSolution sol = v_step_bisection(qc.b, qc.n, s.v.budgets[k]);
        CMatrix shifted = qc.n;
        shifted.diagonal().array() += sol.lambda;
        const CMatrix inv = general_inverse(shifted);
        layer.lambda[k] = sol.lambda;
        layer.omega[k] = {CMatrix::Zero(inv.rows(), inv.cols()), -inv * inv,
                          2.0 * inv - sol.lambda * inv * inv};
        s.v.blocks[k] = ctx.from_qcqp(k, sol.v);
      }
    } else {
      auto& layer = net.mm_layers[l];
      layer.theta = theta;
      layer.phi = phi;
      layer.psi = psi;
      mm_v_step_all(ctx, s, mm_sublayers);
    }
    v = s.v;
  }
  return net;
}

/// Per-entry magnitude of each parameter, estimated from the matrices the net
/// inverts on a set of instances. Stored in a net of the same shape (real values).
inline UnfoldedNet estimate_scales(const UnfoldedNet& net, const std::vector<PrecodingContext>& ctxs,
                                   const std::vector<PrecoderSet>& v_inits) {
  const int layers = net.num_layers();
  const int devices = net.config.num_devices;
  // Per (layer, role slot): sums of ||T||/n, ||P||/sqrt(n), ||Q||/sqrt(n) and counts.
  const int slots = 3 + devices;
  struct Acc {
    double t = 0, p = 0, q = 0, diag = 0;
    int count = 0;
    Eigen::Index dim = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(layers) * slots);
  auto lambda_of = [&](int l, int k) -> cd {
    return net.variant == UnfoldedVariant::DuBca ? net.bca_layers[l].lambda[k] : cd(0.0);
  };
  LayerObserver obs = [&](int l, InverseRole role, int idx, const CMatrix& a) {
    const int slot = role == InverseRole::F0 ? 0 : role == InverseRole::E0 ? 1 : role == InverseRole::Fj ? 2 : 3 + idx;
    CMatrix shifted = a;
    if (role == InverseRole::Nk) shifted.diagonal().array() += lambda_of(l, idx);
    const double n = static_cast<double>(a.rows());
    Acc& s = acc[static_cast<std::size_t>(l) * slots + slot];
    s.t += general_inverse(shifted).norm() / n;
    s.p += shifted.diagonal().cwiseInverse().norm() / std::sqrt(n);
    s.q += a.norm() / std::sqrt(n);
    s.diag += a.diagonal().cwiseAbs().mean();
    s.dim = a.rows();
    ++s.count;
  };
  for (std::size_t i = 0; i < ctxs.size(); ++i) du_forward(net, ctxs[i], v_inits[i], &obs);

  auto approx_scale = [&](int l, int slot) {
    const Acc& s = acc[static_cast<std::size_t>(l) * slots + slot];
    const Eigen::Index dim = s.dim;
    auto fill = [&](double v) {
      return CMatrix::Constant(dim, dim, cd(std::isfinite(v) && v > 0.0 ? v : 1.0));
    };
    const double t = s.t / s.count;
    return InverseApproxParams{fill(t / (s.p / s.count)), fill(t / (s.q / s.count)), fill(t)};
  };
  UnfoldedNet scale = net;
  for (int l = 0; l < layers; ++l) {
    auto fill_common = [&](auto& layer) {
      layer.theta = approx_scale(l, 0);
      layer.phi = approx_scale(l, 1);
      layer.psi = approx_scale(l, 2);
    };
    if (net.variant == UnfoldedVariant::DuBca) {
      auto& layer = scale.bca_layers[l];
      fill_common(layer);
      for (int k = 0; k < devices; ++k) {
        layer.omega[k] = approx_scale(l, 3 + k);
        const Acc& s = acc[static_cast<std::size_t>(l) * slots + 3 + k];
        const double d = s.diag / s.count;
        layer.lambda[k] = std::isfinite(d) && d > 0.0 ? d : 1.0;
      }
    } else {
      auto& layer = scale.mm_layers[l];
      fill_common(layer);
      for (auto& per_device : layer.upsilon)
        for (auto& y : per_device)
          y = CMatrix::Constant(y.rows(), y.cols(), cd(1.0 / std::sqrt(static_cast<double>(y.rows()))));
    }
  }
  return scale;
}

/// Real-vector scales matching flatten(): each complex scale s gives |s| for
/// both the real and the imaginary coordinate.
inline RVector scale_vector(const UnfoldedNet& scale) {
  RVector out(2 * parameter_count(scale));
  Eigen::Index pos = 0;
  visit_params(scale, [&](const cd* p, Eigen::Index c) {
    for (Eigen::Index i = 0; i < c; ++i) {
      out(pos++) = std::abs(p[i]);
      out(pos++) = std::abs(p[i]);
    }
  });
  return out;
}

/// Greedy data-driven initialization: layer by layer, each approximator is the
/// least-squares fit to the exact inverses of the matrices the partially built
/// net visits on the given instances. Y = I; lambda = 0 with the V-step
/// approximator fitted to (N_k + lambda* I)^-1 at the bisection multipliers.
/// With a single instance every fit is exact and the net reproduces the
/// base algorithm.
inline UnfoldedNet init_unfolded(UnfoldedVariant variant, const std::vector<PrecodingContext>& ctxs,
                                 const std::vector<PrecoderSet>& v_inits, int layers,
                                 int mm_sublayers = 2) {
  if (ctxs.empty() || ctxs.size() != v_inits.size())
    throw DimensionMismatch("init_unfolded: need one starting precoder per instance");
  UnfoldedNet net = make_unfolded_net(variant, ctxs.front().config(), layers, mm_sublayers);
  const std::size_t count = ctxs.size();
  std::vector<PrecoderSet> v = v_inits;

  auto fit = [](const std::vector<CMatrix>& mats) {
    std::vector<CMatrix> p, target;
    for (const auto& m : mats) {
      p.push_back(diag_reciprocal(m));
      target.push_back(general_inverse(m));
    }
    return fit_inverse_approx(p, mats, target);
  };

  for (int l = 0; l < layers; ++l) {
    std::vector<CovarianceTerms> terms(count);
    std::vector<CMatrix> f0s, e0s, fjs;
    for (std::size_t i = 0; i < count; ++i) {
      terms[i] = compute_F(ctxs[i], v[i]);
      f0s.push_back(terms[i].f0);
      for (const auto& f : terms[i].fj) fjs.push_back(f);
    }
    const InverseApproxParams theta = fit(f0s);
    for (std::size_t i = 0; i < count; ++i) {
      const CMatrix u = ctxs[i].alpha() * inv_approx(terms[i].f0, theta) * terms[i].hv * ctxs[i].sigma_sqrt();
      e0s.push_back(compute_E0(ctxs[i], u, terms[i].hv));
    }
    const InverseApproxParams phi = fit(e0s);
    const InverseApproxParams psi = fit(fjs);

    auto v_steps = [&](auto& layer, auto&& update_device) {
      layer.theta = theta;
      layer.phi = phi;
      layer.psi = psi;
      std::vector<LayerAuxiliaries> aux;
      for (std::size_t i = 0; i < count; ++i)
        aux.push_back(learned_auxiliaries(ctxs[i], v[i], theta, phi, psi));
      for (int k = 0; k < ctxs.front().num_devices(); ++k) {
        std::vector<Qcqp> qs;
        for (std::size_t i = 0; i < count; ++i) qs.push_back(assemble_qcqp(ctxs[i], aux[i].u, aux[i].w, v[i], k));
        update_device(k, qs);
      }
    };
    if (variant == UnfoldedVariant::DuBca) {
      auto& layer = net.bca_layers[l];
      v_steps(layer, [&](int k, const std::vector<Qcqp>& qs) {
        std::vector<CMatrix> p, q, target;
        for (std::size_t i = 0; i < count; ++i) {
          const QcqpSolution sol = v_step_bisection(qs[i].b, qs[i].n, v[i].budgets[k]);
          CMatrix shifted = qs[i].n;
          shifted.diagonal().array() += sol.lambda;
          p.push_back(diag_reciprocal(qs[i].n));
          q.push_back(qs[i].n);
          target.push_back(general_inverse(shifted));
        }
        layer.omega[k] = fit_inverse_approx(p, q, target);
        layer.lambda[k] = 0.0;
        for (std::size_t i = 0; i < count; ++i)
          du_bca_v_update(ctxs[i], qs[i], layer.omega[k], layer.lambda[k], k, v[i]);
      });
    } else {
      auto& layer = net.mm_layers[l];
      v_steps(layer, [&](int k, const std::vector<Qcqp>& qs) {
        for (std::size_t i = 0; i < count; ++i) du_bca_mm_v_update(ctxs[i], qs[i], layer.upsilon[k], k, v[i]);
      });
    }
  }
  return net;
}

struct TrainerConfig {
  SpsaOptions spsa;
  int threads = 1;
  int batch_samples = 512;  // feature samples per E2E step
  /// Samples in the fixed E2E reference batch that decides which iterate is kept.
  int validation_samples = 4096;
};

struct TrainingReport {
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int steps = 0;
  std::vector<std::pair<int, double>> history;  // (step, objective)
};

/// One context per (channel, noise level), index n * E + e.
inline std::vector<PrecodingContext> training_contexts(const SystemConfig& cfg,
                                                       const std::vector<ChannelState>& channels,
                                                       const std::vector<double>& noise_levels,
                                                       const GMModel& gm, double eps2) {
  std::vector<PrecodingContext> out;
  for (const auto& ch : channels)
    for (double s : noise_levels) out.emplace_back(cfg, ch.with_sigma(s), gm, eps2);
  return out;
}

/// du_forward on every (channel, noise level) from each channel's seeded start.
inline std::vector<std::vector<PrecoderSet>> forward_grid(const UnfoldedNet& net,
                                                          const std::vector<PrecodingContext>& ctxs,
                                                          const std::vector<PrecoderSet>& v_inits,
                                                          std::size_t noise_count, int threads) {
  const std::size_t channels = ctxs.size() / noise_count;
  std::vector<std::vector<PrecoderSet>> out(channels, std::vector<PrecoderSet>(noise_count));
  parallel_for(static_cast<int>(ctxs.size()), threads, [&](int i) {
    const std::size_t n = i / noise_count, e = i % noise_count;
    out[n][e] = du_forward(net, ctxs[i], v_inits[n]);
  });
  return out;
}

namespace detail {

/// Shared SPSA driver: minimizes loss(net, sample_seed) over base + scale * theta.
template <typename Loss>
UnfoldedNet spsa_train(const UnfoldedNet& net, const UnfoldedNet& scale, Loss&& loss,
                       const TrainerConfig& tc, std::uint64_t seed, TrainingReport* report,
                       double sign) {
  const RVector base = flatten(net);
  const RVector sc = scale_vector(scale);
  UnfoldedNet work = net;
  auto objective = [&](const RVector& theta, std::uint64_t ss) {
    UnfoldedNet trial = work;
    unflatten(trial, base + sc.cwiseProduct(theta));
    try {
      const double f = loss(trial, ss);
      return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const SpsaResult r = spsa_minimize(objective, RVector::Zero(base.size()), tc.spsa, seed);
  UnfoldedNet out = net;
  unflatten(out, base + sc.cwiseProduct(r.x));
  if (report) {
    report->initial_objective = sign * r.initial_loss;
    report->final_objective = sign * r.best_loss;
    report->steps = r.steps;
    report->history.clear();
    for (const auto& [t, f] : r.history) report->history.emplace_back(t, sign * f);
  }
  return out;
}

}  // namespace detail

/// Mean channel rate reduction of the net over the (channel, noise level) grid.
inline double unfolded_objective(const UnfoldedNet& net, const std::vector<ChannelState>& channels,
                                 const std::vector<double>& noise_levels, const GMModel& gm,
                                 double eps2, int threads = 1) {
  const auto ctxs = training_contexts(net.config, channels, noise_levels, gm, eps2);
  std::vector<PrecoderSet> inits;
  for (const auto& ch : channels) inits.push_back(channel_init(net.config, gm, ch));
  return channel_mcr2_batch(forward_grid(net, ctxs, inits, noise_levels.size(), threads), channels,
                            noise_levels, gm, eps2);
}

/// Pretraining: maximizes channel_mcr2_batch of the net's output over the
/// training channels. The returned net is never worse than the input on this
/// objective.
inline UnfoldedNet train_unfolded(const UnfoldedNet& net, const std::vector<ChannelState>& channels,
                                  const std::vector<double>& noise_levels, const GMModel& gm,
                                  double eps2, const TrainerConfig& tc, std::uint64_t seed,
                                  TrainingReport* report = nullptr) {
  if (channels.empty() || noise_levels.empty())
    throw DimensionMismatch("train_unfolded: empty training set");
  const auto ctxs = training_contexts(net.config, channels, noise_levels, gm, eps2);
  std::vector<PrecoderSet> inits, ctx_inits;
  for (const auto& ch : channels) inits.push_back(channel_init(net.config, gm, ch));
  for (std::size_t i = 0; i < ctxs.size(); ++i) ctx_inits.push_back(inits[i / noise_levels.size()]);
  const UnfoldedNet scale = estimate_scales(net, ctxs, ctx_inits);
  auto loss = [&](const UnfoldedNet& trial, std::uint64_t) {
    return -channel_mcr2_batch(forward_grid(trial, ctxs, inits, noise_levels.size(), tc.threads),
                               channels, noise_levels, gm, eps2);
  };
  return detail::spsa_train(net, scale, loss, tc, seed, report, -1.0);
}

/// Feature batch of one E2E step. Sample seed 0 is the fixed reference batch.
inline FeatureBatch finetune_batch(const GMModel& gm, int samples, std::uint64_t seed,
                                   std::uint64_t sample_seed) {
  return sample_features(gm, samples, false, derive_seed(seed, sample_seed));
}

inline std::uint64_t finetune_noise_seed(std::uint64_t seed, std::uint64_t sample_seed) {
  return derive_seed(seed ^ 0xe2eULL, sample_seed);
}

/// E2E loss of the net on one index-paired batch.
inline double finetune_loss(const UnfoldedNet& net, const GMModel& gm,
                            const std::vector<ChannelState>& channels,
                            const std::vector<double>& noise_levels, const FeatureBatch& batch,
                            std::uint64_t noise_seed, int threads = 1) {
  const auto ctxs = training_contexts(net.config, channels, noise_levels, gm, net.config.eps2_precoding);
  std::vector<PrecoderSet> inits;
  for (const auto& ch : channels) inits.push_back(channel_init(net.config, gm, ch));
  return e2e_loss_paired(batch, forward_grid(net, ctxs, inits, noise_levels.size(), threads), channels,
                         noise_levels, gm, noise_seed);
}

/// End-to-end fine-tuning: minimizes the index-paired E2E cross-entropy with
/// fresh feature/noise samples per step (common to both perturbed evaluations).
inline UnfoldedNet e2e_finetune(const UnfoldedNet& net, const GMModel& gm,
                                const std::vector<ChannelState>& channels,
                                const std::vector<double>& noise_levels, const TrainerConfig& tc,
                                std::uint64_t seed, TrainingReport* report = nullptr) {
  if (channels.empty() || noise_levels.empty())
    throw DimensionMismatch("e2e_finetune: empty training set");
  const double eps2 = net.config.eps2_precoding;
  const auto ctxs = training_contexts(net.config, channels, noise_levels, gm, eps2);
  std::vector<PrecoderSet> inits, ctx_inits;
  for (const auto& ch : channels) inits.push_back(channel_init(net.config, gm, ch));
  for (std::size_t i = 0; i < ctxs.size(); ++i) ctx_inits.push_back(inits[i / noise_levels.size()]);
  const UnfoldedNet scale = estimate_scales(net, ctxs, ctx_inits);
  auto loss = [&](const UnfoldedNet& trial, std::uint64_t ss) {
    const FeatureBatch batch = finetune_batch(gm, ss == 0 ? tc.validation_samples : tc.batch_samples, seed, ss);
    return e2e_loss_paired(batch, forward_grid(trial, ctxs, inits, noise_levels.size(), tc.threads),
                           channels, noise_levels, gm, finetune_noise_seed(seed, ss));
  };
  return detail::spsa_train(net, scale, loss, tc, seed, report, 1.0);
}

}  // namespace taskcomm
