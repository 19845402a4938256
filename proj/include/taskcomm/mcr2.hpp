#pragma once

// Coding-rate-reduction objectives.
//
// Feature side: empirical rate reduction of a labelled sample matrix Z,
// evaluated in the D x D Gram domain, with its Wirtinger gradient and a
// projected-ascent feature optimizer standing in for encoder training.
//
// Channel side: rate reduction of the received signal given the channel,
// which depends on the features only through (p_j, Sigma_j).

#include <cstdint>
#include <vector>

#include "taskcomm/model.hpp"

namespace taskcomm {

namespace detail {
inline void check_classes(const FeatureBatch& batch) {
  for (int j = 0; j < batch.num_classes; ++j)
    if (batch.class_count(j) == 0) throw EmptyClass(j);
}
}  // namespace detail

/// log det(I + D/(M eps2) Z Z^H) - sum_j M_j/M log det(I + D/(M_j eps2) Z_j Z_j^H).
inline double feature_mcr2(const FeatureBatch& batch, double eps2) {
  detail::check_classes(batch);
  const int d = batch.dim();
  const double m = batch.size();
  const CMatrix eye = CMatrix::Identity(d, d);
  double value = logdet_hpd(eye + (d / (m * eps2)) * batch.samples * batch.samples.adjoint());
  for (int j = 0; j < batch.num_classes; ++j) {
    const CMatrix zj = batch.class_samples(j);
    const double mj = static_cast<double>(zj.cols());
    value -= (mj / m) * logdet_hpd(eye + (d / (mj * eps2)) * zj * zj.adjoint());
  }
  return value;
}

/// Gradient of feature_mcr2 with respect to conj(Z) (Wirtinger convention).
/// For a real perturbation direction the directional derivative is
/// 2 Re tr(G^H dZ).
inline CMatrix feature_mcr2_grad(const FeatureBatch& batch, double eps2) {
  detail::check_classes(batch);
  const int d = batch.dim();
  const double m = batch.size();
  const double c = d / (m * eps2);
  const CMatrix eye = CMatrix::Identity(d, d);
  const CMatrix z = batch.samples;
  CMatrix grad = c * hermitian_solve(eye + c * z * z.adjoint(), z);
  for (int j = 0; j < batch.num_classes; ++j) {
    const auto idx = batch.class_indices(j);
    const CMatrix zj = batch.class_samples(j);
    const double cj = d / (static_cast<double>(zj.cols()) * eps2);
    // (M_j / M) * c_j == c, so the class term carries the same prefactor.
    const CMatrix gj = c * hermitian_solve(eye + cj * zj * zj.adjoint(), zj);
    for (std::size_t i = 0; i < idx.size(); ++i) grad.col(idx[i]) -= gj.col(i);
  }
  return grad;
}

/// Empirical statistics Sigma = Z Z^H / M, Sigma_j = Z_j Z_j^H / M_j, p_j = M_j / M.
inline GMModel estimate_gm(const FeatureBatch& batch) {
  detail::check_classes(batch);
  std::vector<double> priors;
  std::vector<CMatrix> covs;
  for (int j = 0; j < batch.num_classes; ++j) {
    const CMatrix zj = batch.class_samples(j);
    priors.push_back(static_cast<double>(zj.cols()) / batch.size());
    covs.push_back(hermitian_part(zj * zj.adjoint()) / static_cast<double>(zj.cols()));
  }
  // sum_j (M_j/M) Z_j Z_j^H / M_j is exactly Z Z^H / M.
  return GMModel::from_components(std::move(priors), std::move(covs));
}

struct FeatureOptimResult {
  FeatureBatch batch;
  GMModel statistics;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Projected gradient ascent on feature_mcr2 over the product of unit spheres.
inline FeatureOptimResult optimize_features(FeatureBatch init, double eps2, int steps, double lr) {
  FeatureOptimResult out;
  out.initial_objective = feature_mcr2(init, eps2);
  for (int t = 0; t < steps; ++t) {
    init.samples += lr * feature_mcr2_grad(init, eps2);
    for (Eigen::Index m = 0; m < init.samples.cols(); ++m) {
      const double n = init.samples.col(m).norm();
      if (!(n > 0.0)) throw NumericError("feature column collapsed to zero");
      init.samples.col(m) /= n;
    }
  }
  out.final_objective = steps == 0 ? out.initial_objective : feature_mcr2(init, eps2);
  out.statistics = estimate_gm(init);
  out.batch = std::move(init);
  return out;
}

/// sum_j p_j (log det F_0 - log det F_j); exactly zero whenever every F_j equals F_0.
inline double rate_reduction(double logdet_global, const std::vector<double>& logdet_class,
                             const std::vector<double>& priors) {
  double value = 0.0;
  for (std::size_t j = 0; j < priors.size(); ++j) value += priors[j] * (logdet_global - logdet_class[j]);
  return value;
}

/// alpha = (O N_r) / eps2 and gamma = 1 + alpha sigma^2 for one channel state.
struct PrecodingConstants {
  double alpha;
  double gamma;
};

inline PrecodingConstants precoding_constants(const ChannelState& ch, double eps2) {
  const double alpha = ch.rx_dim() / eps2;
  return {alpha, 1.0 + alpha * ch.noise_variance()};
}

/// log det(gamma I + alpha H V Sigma V^H H^H) - sum_j p_j log det(gamma I + alpha H V Sigma_j V^H H^H).
inline double channel_mcr2(const PrecoderSet& v, const ChannelState& ch, const GMModel& gm,
                           double eps2) {
  const auto [alpha, gamma] = precoding_constants(ch, eps2);
  const CMatrix hv = ch.assembled() * v.assembled();
  if (hv.cols() != gm.dim()) throw DimensionMismatch("channel_mcr2: feature dimension mismatch");
  const Eigen::Index n = hv.rows();
  const CMatrix g = gamma * CMatrix::Identity(n, n);
  const double global = logdet_hpd(g + alpha * hermitian_part(hv * gm.global_cov * hv.adjoint()));
  std::vector<double> per_class;
  for (const auto& sj : gm.class_covs)
    per_class.push_back(logdet_hpd(g + alpha * hermitian_part(hv * sj * hv.adjoint())));
  return rate_reduction(global, per_class, gm.priors);
}

/// Mean of channel_mcr2 over the channel x noise-level grid. precoders[n][e]
/// pairs with channels[n] at noise level noise_levels[e] (a standard deviation).
inline double channel_mcr2_batch(const std::vector<std::vector<PrecoderSet>>& precoders,
                                 const std::vector<ChannelState>& channels,
                                 const std::vector<double>& noise_levels, const GMModel& gm,
                                 double eps2) {
  if (precoders.size() != channels.size())
    throw DimensionMismatch("channel_mcr2_batch: one precoder row per channel required");
  double acc = 0.0;
  for (std::size_t n = 0; n < channels.size(); ++n) {
    if (precoders[n].size() != noise_levels.size())
      throw DimensionMismatch("channel_mcr2_batch: one precoder per noise level required");
    for (std::size_t e = 0; e < noise_levels.size(); ++e)
      acc += channel_mcr2(precoders[n][e], channels[n].with_sigma(noise_levels[e]), gm, eps2);
  }
  return acc / static_cast<double>(channels.size() * noise_levels.size());
}

}  // namespace taskcomm
