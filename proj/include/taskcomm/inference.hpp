#pragma once

// MAP classification of received vectors under the Gaussian-mixture feature
// model, the end-to-end cross-entropy loss and Monte-Carlo accuracy.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "taskcomm/bca.hpp"
#include "taskcomm/parallel.hpp"

namespace taskcomm {

/// log(sum exp(x)); -inf entries are allowed.
inline double log_sum_exp(const RVector& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

/// Class-conditional receive covariances C_j = HV Sigma_j (HV)^H + sigma^2 I,
/// factored once per (precoder, channel) pair.
class MapClassifier {
 public:
  MapClassifier(const PrecoderSet& v, const ChannelState& ch, const GMModel& gm) {
    const CMatrix hv = ch.assembled() * v.assembled();
    if (hv.cols() != gm.dim()) throw DimensionMismatch("MapClassifier: feature dimension mismatch");
    const Eigen::Index n = hv.rows();
    const double s2 = ch.noise_variance();
    for (int j = 0; j < gm.num_classes(); ++j) {
      CMatrix c = hermitian_part(hv * gm.class_covs[j] * hv.adjoint());
      c.diagonal().array() += s2;
      Eigen::LLT<CMatrix> llt(c);
      if (llt.info() != Eigen::Success) throw NotPositiveDefinite("class receive covariance");
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i).real());
      // log p_j - log det(pi C_j)
      offset_.push_back(std::log(gm.priors[j]) - logdet - n * std::log(std::numbers::pi));
      chol_.push_back(std::move(llt));
    }
  }

  int num_classes() const { return static_cast<int>(chol_.size()); }

  /// Unnormalized log p_j + log CN(r; 0, C_j).
  RVector log_joint(const CVector& r) const {
    RVector out(num_classes());
    for (int j = 0; j < num_classes(); ++j) {
      const CVector w = chol_[j].matrixL().solve(r);
      out(j) = offset_[j] - w.squaredNorm();
    }
    return out;
  }

  /// Log posteriors normalized by log-sum-exp.
  RVector log_posteriors(const CVector& r) const {
    RVector lj = log_joint(r);
    return (lj.array() - log_sum_exp(lj)).matrix();
  }

  /// argmax with ties resolved toward the lower index.
  int classify(const CVector& r) const {
    const RVector lj = log_joint(r);
    int best = 0;
    for (int j = 1; j < lj.size(); ++j)
      if (lj(j) > lj(best)) best = j;
    return best;
  }

 private:
  std::vector<Eigen::LLT<CMatrix>> chol_;
  std::vector<double> offset_;
};

inline RVector class_log_posteriors(const CVector& r, const PrecoderSet& v, const ChannelState& ch,
                                    const GMModel& gm) {
  return MapClassifier(v, ch, gm).log_posteriors(r);
}

inline int map_classify(const CVector& r, const PrecoderSet& v, const ChannelState& ch,
                        const GMModel& gm) {
  return MapClassifier(v, ch, gm).classify(r);
}

/// Noise seed of one grid cell; shared by the vectorized and reference loss loops.
inline std::uint64_t e2e_noise_seed(std::uint64_t seed, std::uint64_t cell) {
  return derive_seed(seed, cell);
}

/// Full-grid E2E cross-entropy: mean of -log posterior of the true class over
/// every sample m, channel n, noise level e and noise draw f.
/// precoders[n][e] is used with channels[n] at noise level noise_levels[e].
inline double e2e_loss(const FeatureBatch& features,
                       const std::vector<std::vector<PrecoderSet>>& precoders,
                       const std::vector<ChannelState>& channels,
                       const std::vector<double>& noise_levels, const GMModel& gm,
                       std::uint64_t seed, int noise_draws = 1) {
  const std::size_t nn = channels.size(), ne = noise_levels.size();
  if (precoders.size() != nn) throw DimensionMismatch("e2e_loss: one precoder row per channel");
  if (noise_draws < 1) throw DimensionMismatch("e2e_loss: noise_draws must be >= 1");
  double acc = 0.0;
  for (std::size_t n = 0; n < nn; ++n) {
    if (precoders[n].size() != ne) throw DimensionMismatch("e2e_loss: one precoder per noise level");
    for (std::size_t e = 0; e < ne; ++e) {
      const ChannelState ch = channels[n].with_sigma(noise_levels[e]);
      const MapClassifier clf(precoders[n][e], ch, gm);
      for (int m = 0; m < features.size(); ++m) {
        const CVector clean = noiseless_receive(features.samples.col(m), precoders[n][e], ch);
        for (int f = 0; f < noise_draws; ++f) {
          const std::uint64_t cell = ((static_cast<std::uint64_t>(m) * nn + n) * ne + e) * noise_draws + f;
          Rng rng = make_rng(e2e_noise_seed(seed, cell));
          const CVector r = clean + complex_noise(clean.size(), ch.sigma(), rng);
          acc -= clf.log_posteriors(r)(features.labels[m]);
        }
      }
    }
  }
  return acc / (static_cast<double>(features.size()) * nn * ne * noise_draws);
}

/// Index-paired E2E loss: sample m is sent over channel m mod N at noise level
/// (m / N) mod E with its own noise draw.
inline double e2e_loss_paired(const FeatureBatch& features,
                              const std::vector<std::vector<PrecoderSet>>& precoders,
                              const std::vector<ChannelState>& channels,
                              const std::vector<double>& noise_levels, const GMModel& gm,
                              std::uint64_t seed) {
  const std::size_t nn = channels.size(), ne = noise_levels.size();
  if (nn == 0 || ne == 0) throw DimensionMismatch("e2e_loss_paired: empty channel or noise set");
  if (precoders.size() != nn) throw DimensionMismatch("e2e_loss_paired: one precoder row per channel");
  std::vector<std::vector<std::vector<int>>> members(nn, std::vector<std::vector<int>>(ne));
  for (int m = 0; m < features.size(); ++m) {
    const std::size_t n = m % nn;
    members[n][(m / nn) % ne].push_back(m);
  }
  double acc = 0.0;
  for (std::size_t n = 0; n < nn; ++n) {
    if (precoders[n].size() != ne) throw DimensionMismatch("e2e_loss_paired: one precoder per noise level");
    for (std::size_t e = 0; e < ne; ++e) {
      if (members[n][e].empty()) continue;
      const ChannelState ch = channels[n].with_sigma(noise_levels[e]);
      const MapClassifier clf(precoders[n][e], ch, gm);
      for (int m : members[n][e]) {
        Rng rng = make_rng(e2e_noise_seed(seed, static_cast<std::uint64_t>(m)));
        const CVector clean = noiseless_receive(features.samples.col(m), precoders[n][e], ch);
        const CVector r = clean + complex_noise(clean.size(), ch.sigma(), rng);
        acc -= clf.log_posteriors(r)(features.labels[m]);
      }
    }
  }
  return acc / features.size();
}

/// Computes a precoder for one instance from a feasible starting point.
using PrecoderSolver = std::function<PrecoderSet(const PrecodingContext&, const PrecoderSet&)>;

/// FNV-1a over the channel entries: a reproducible per-channel seed.
inline std::uint64_t channel_seed(const ChannelState& ch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const CMatrix& a = ch.assembled();
  const auto* bytes = reinterpret_cast<const unsigned char*>(a.data());
  const std::size_t len = static_cast<std::size_t>(a.size()) * sizeof(cd);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// The seeded feasible starting precoder used by every solver on this channel.
inline PrecoderSet channel_init(const SystemConfig& cfg, const GMModel& gm, const ChannelState& ch) {
  return random_feasible_precoder(cfg, gm, channel_seed(ch));
}

struct AccuracyStats {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_channel;
  double objective_mean = 0.0;  // mean channel rate reduction of the computed precoders
};

struct EvaluationSpec {
  int n_channels = 100;
  int samples_per_channel = 100;
  int noise_draws = 1;  // received-noise draws per feature sample
  int threads = 1;
};

namespace detail {

/// Accuracy of one precoder on one channel; features and noise from `seed`.
inline double channel_accuracy(const PrecoderSet& v, const ChannelState& ch, const GMModel& gm,
                               int samples, int noise_draws, std::uint64_t seed) {
  const FeatureBatch batch = sample_features(gm, samples, false, derive_seed(seed, 1));
  const MapClassifier clf(v, ch, gm);
  Rng noise = make_rng(derive_seed(seed, 2));
  int correct = 0;
  for (int m = 0; m < batch.size(); ++m) {
    const CVector clean = noiseless_receive(batch.samples.col(m), v, ch);
    for (int f = 0; f < noise_draws; ++f) {
      const CVector r = clean + complex_noise(clean.size(), ch.sigma(), noise);
      if (clf.classify(r) == batch.labels[m]) ++correct;
    }
  }
  return static_cast<double>(correct) / (static_cast<double>(batch.size()) * noise_draws);
}

inline void finish_stats(AccuracyStats& st, const std::vector<double>& objective) {
  const auto n = static_cast<double>(st.per_channel.size());
  double sum = 0.0, obj = 0.0;
  for (std::size_t c = 0; c < st.per_channel.size(); ++c) {
    sum += st.per_channel[c];
    obj += objective[c];
  }
  st.mean = sum / n;
  st.objective_mean = obj / n;
  st.std_error = 0.0;
  if (st.per_channel.size() > 1) {
    double ss = 0.0;
    for (double a : st.per_channel) ss += (a - st.mean) * (a - st.mean);
    st.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
}

}  // namespace detail

/// Monte-Carlo accuracy over freshly drawn channels. Channel c uses seed
/// derive_seed(seed, c) for its channel, features and noise, so two solvers
/// evaluated with the same seed see identical channels, samples and noise.
inline AccuracyStats evaluate_accuracy(const PrecoderSolver& solver, const GMModel& gm,
                                       const RicianParams& rician, const SystemConfig& cfg,
                                       double sigma, const EvaluationSpec& spec,
                                       std::uint64_t seed) {
  if (spec.n_channels < 1 || spec.samples_per_channel < 1 || spec.noise_draws < 1)
    throw DimensionMismatch("evaluate_accuracy: counts must be >= 1");
  AccuracyStats st;
  st.per_channel.assign(spec.n_channels, 0.0);
  std::vector<double> objective(spec.n_channels, 0.0);
  parallel_for(spec.n_channels, spec.threads, [&](int c) {
    const std::uint64_t cs = derive_seed(seed, static_cast<std::uint64_t>(c));
    const ChannelState ch = sample_channel(rician, cfg, sigma, derive_seed(cs, 0));
    const PrecodingContext ctx(cfg, ch, gm, cfg.eps2_precoding);
    const PrecoderSet v = solver(ctx, channel_init(cfg, gm, ch));
    objective[c] = p4_objective(ctx, v);
    st.per_channel[c] = detail::channel_accuracy(v, ch, gm, spec.samples_per_channel, spec.noise_draws, cs);
  });
  detail::finish_stats(st, objective);
  return st;
}

/// Same protocol on a fixed channel list (n_channels in `spec` is ignored).
inline AccuracyStats evaluate_accuracy_on(const PrecoderSolver& solver, const GMModel& gm,
                                          const SystemConfig& cfg,
                                          const std::vector<ChannelState>& channels,
                                          const EvaluationSpec& spec, std::uint64_t seed) {
  if (channels.empty() || spec.samples_per_channel < 1 || spec.noise_draws < 1)
    throw DimensionMismatch("evaluate_accuracy_on: counts must be >= 1");
  const int n = static_cast<int>(channels.size());
  AccuracyStats st;
  st.per_channel.assign(n, 0.0);
  std::vector<double> objective(n, 0.0);
  parallel_for(n, spec.threads, [&](int c) {
    const std::uint64_t cs = derive_seed(seed, static_cast<std::uint64_t>(c));
    const PrecodingContext ctx(cfg, channels[c], gm, cfg.eps2_precoding);
    const PrecoderSet v = solver(ctx, channel_init(cfg, gm, channels[c]));
    objective[c] = p4_objective(ctx, v);
    st.per_channel[c] = detail::channel_accuracy(v, channels[c], gm, spec.samples_per_channel, spec.noise_draws, cs);
  });
  detail::finish_stats(st, objective);
  return st;
}

}  // namespace taskcomm
