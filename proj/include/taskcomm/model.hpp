#pragma once

// System configuration, Gaussian-mixture feature source, Rician channel
// sampler and the linear transmission r = H V z + n.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "taskcomm/numerics.hpp"
#include "taskcomm/random.hpp"

namespace taskcomm {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

struct SystemConfig {
  int num_devices = 1;
  int num_classes = 2;
  std::vector<int> feature_dims{4};  // D_k
  std::vector<int> tx_antennas{4};   // N_t,k
  int rx_antennas = 4;               // N_r
  int slots = 1;                     // O
  std::vector<double> power_budgets{1.0};  // P_k, watts
  double eps2_feature = 0.5;
  double eps2_precoding = 1e-6;

  /// Same D_k, N_t,k and P_k for every device.
  static SystemConfig uniform(int devices, int classes, int feature_dim, int tx, int rx,
                              int slots, double power) {
    SystemConfig c;
    c.num_devices = devices;
    c.num_classes = classes;
    c.feature_dims.assign(devices, feature_dim);
    c.tx_antennas.assign(devices, tx);
    c.rx_antennas = rx;
    c.slots = slots;
    c.power_budgets.assign(devices, power);
    return c;
  }

  int total_feature_dim() const {
    return std::accumulate(feature_dims.begin(), feature_dims.end(), 0);
  }
  int feature_offset(int k) const {
    return std::accumulate(feature_dims.begin(), feature_dims.begin() + k, 0);
  }
  int rx_dim() const { return slots * rx_antennas; }
  int tx_dim(int k) const { return slots * tx_antennas[k]; }

  void validate() const {
    auto fail = [](const std::string& m) { throw DimensionMismatch("invalid system config: " + m); };
    if (num_devices < 1) fail("device count must be >= 1");
    if (num_classes < 1) fail("class count must be >= 1");
    if (rx_antennas < 1) fail("receive antennas must be >= 1");
    if (slots < 1) fail("slot count must be >= 1");
    const auto k = static_cast<std::size_t>(num_devices);
    if (feature_dims.size() != k || tx_antennas.size() != k || power_budgets.size() != k)
      fail("per-device lists must have one entry per device");
    for (std::size_t i = 0; i < k; ++i) {
      if (feature_dims[i] < 1) fail("feature dims must be >= 1");
      if (tx_antennas[i] < 1) fail("transmit antennas must be >= 1");
      if (!(power_budgets[i] > 0.0)) fail("power budgets must be > 0");
    }
    if (!(eps2_feature > 0.0) || !(eps2_precoding > 0.0)) fail("eps^2 must be > 0");
  }
};

/// Zero-mean Gaussian mixture over the concatenated feature vector.
struct GMModel {
  std::vector<double> priors;
  std::vector<CMatrix> class_covs;
  CMatrix global_cov;

  static GMModel from_components(std::vector<double> priors, std::vector<CMatrix> covs) {
    if (priors.size() != covs.size() || priors.empty())
      throw DimensionMismatch("GMModel: need one covariance per prior");
    GMModel m;
    const Eigen::Index d = covs.front().rows();
    m.global_cov = CMatrix::Zero(d, d);
    for (std::size_t j = 0; j < covs.size(); ++j) {
      require_square(covs[j], "class covariance");
      if (covs[j].rows() != d) throw DimensionMismatch("GMModel: covariances differ in size");
      m.global_cov += priors[j] * covs[j];
    }
    m.priors = std::move(priors);
    m.class_covs = std::move(covs);
    return m;
  }

  int dim() const { return static_cast<int>(global_cov.rows()); }
  int num_classes() const { return static_cast<int>(priors.size()); }

  /// Sigma^(qk): rows of block q, columns of block k.
  static CMatrix block(const CMatrix& cov, const SystemConfig& cfg, int q, int k) {
    return cov.block(cfg.feature_offset(q), cfg.feature_offset(k), cfg.feature_dims[q],
                     cfg.feature_dims[k]);
  }
};

/// Deterministic LoS component: rank-one outer product of unit-modulus
/// steering vectors with linearly spaced phases. The angle depends only on the
/// device index.
inline CMatrix los_component(int device, int num_devices, int rows, int cols) {
  const double pi = std::numbers::pi;
  const double theta_r = -pi / 3.0 + (2.0 * pi / 3.0) * (device + 0.5) / num_devices;
  const double theta_t = pi / 7.0 * (device + 1);
  CVector ar(rows), at(cols);
  for (int i = 0; i < rows; ++i) ar(i) = std::polar(1.0, pi * i * std::sin(theta_r));
  for (int i = 0; i < cols; ++i) at(i) = std::polar(1.0, pi * i * std::sin(theta_t));
  return ar * at.adjoint();
}

struct RicianParams {
  double kappa = 1.0;
  double distance_m = 80.0;
  double pathloss_db = 32.6 + 36.7 * std::log10(80.0);
  bool hold_channel = true;  // identical channel in every slot when O > 1

  static RicianParams at_distance(double d, double kappa = 1.0) {
    RicianParams p;
    p.kappa = kappa;
    p.distance_m = d;
    p.pathloss_db = 32.6 + 36.7 * std::log10(d);
    return p;
  }
  double amplitude_gain() const { return std::pow(10.0, -pathloss_db / 20.0); }
  double power_gain() const { return std::pow(10.0, -pathloss_db / 10.0); }
};

/// Channel blocks H_k (block-diagonal over slots) plus noise level.
class ChannelState {
 public:
  ChannelState() = default;
  ChannelState(std::vector<CMatrix> blocks, double sigma, int slots = 1)
      : blocks_(std::move(blocks)), sigma_(sigma), slots_(slots) {
    if (blocks_.empty()) throw DimensionMismatch("ChannelState needs at least one block");
    if (!(sigma_ >= 0.0)) throw DimensionMismatch("noise level must be non-negative");
    const Eigen::Index rows = blocks_.front().rows();
    Eigen::Index cols = 0;
    for (const auto& b : blocks_) {
      if (b.rows() != rows) throw DimensionMismatch("channel blocks differ in row count");
      cols += b.cols();
    }
    h_.resize(rows, cols);
    Eigen::Index c = 0;
    for (const auto& b : blocks_) {
      h_.middleCols(c, b.cols()) = b;
      offsets_.push_back(c);
      c += b.cols();
    }
  }

  const std::vector<CMatrix>& blocks() const { return blocks_; }
  const CMatrix& block(int k) const { return blocks_[k]; }
  const CMatrix& assembled() const { return h_; }
  double sigma() const { return sigma_; }
  double noise_variance() const { return sigma_ * sigma_; }
  int slots() const { return slots_; }
  int num_devices() const { return static_cast<int>(blocks_.size()); }
  int rx_dim() const { return static_cast<int>(h_.rows()); }
  Eigen::Index column_offset(int k) const { return offsets_[k]; }

  ChannelState with_sigma(double sigma) const {
    ChannelState c = *this;
    c.sigma_ = sigma;
    return c;
  }

 private:
  std::vector<CMatrix> blocks_;
  std::vector<Eigen::Index> offsets_;
  CMatrix h_;
  double sigma_ = 0.0;
  int slots_ = 1;
};

/// Per-device precoders V_k (O*N_t,k x D_k) with their power budgets.
struct PrecoderSet {
  std::vector<CMatrix> blocks;
  std::vector<double> budgets;

  int num_devices() const { return static_cast<int>(blocks.size()); }
  CMatrix assembled() const { return block_diagonal(blocks); }

  /// tr(V_k Sigma^(kk) V_k^H).
  double power(int k, const CMatrix& sigma_kk) const {
    return (blocks[k] * sigma_kk * blocks[k].adjoint()).trace().real();
  }
  bool feasible(const GMModel& gm, const SystemConfig& cfg, double slack = 1e-9) const {
    for (int k = 0; k < num_devices(); ++k) {
      const double p = power(k, GMModel::block(gm.global_cov, cfg, k, k));
      if (p > budgets[k] * (1.0 + slack) + slack) return false;
    }
    return true;
  }
};

/// Random complex Gaussian precoder scaled so every device spends its full budget.
inline PrecoderSet random_feasible_precoder(const SystemConfig& cfg, const GMModel& gm,
                                            std::uint64_t seed) {
  Rng rng = make_rng(seed);
  PrecoderSet v;
  for (int k = 0; k < cfg.num_devices; ++k) {
    CMatrix b = complex_normal_matrix(cfg.tx_dim(k), cfg.feature_dims[k], rng);
    const CMatrix skk = GMModel::block(gm.global_cov, cfg, k, k);
    const double p = (b * skk * b.adjoint()).trace().real();
    if (p > 0.0) b *= std::sqrt(cfg.power_budgets[k] / p);
    v.blocks.push_back(std::move(b));
    v.budgets.push_back(cfg.power_budgets[k]);
  }
  return v;
}

/// Zero-padded (or truncated) identity precoder scaled to the full budget.
inline PrecoderSet identity_precoder(const SystemConfig& cfg, const GMModel& gm) {
  PrecoderSet v;
  for (int k = 0; k < cfg.num_devices; ++k) {
    CMatrix b = CMatrix::Identity(cfg.tx_dim(k), cfg.feature_dims[k]);
    const CMatrix skk = GMModel::block(gm.global_cov, cfg, k, k);
    const double p = (b * skk * b.adjoint()).trace().real();
    if (p > 0.0) b *= std::sqrt(cfg.power_budgets[k] / p);
    v.blocks.push_back(std::move(b));
    v.budgets.push_back(cfg.power_budgets[k]);
  }
  return v;
}

/// Feature samples Z (D x M) with labels.
struct FeatureBatch {
  CMatrix samples;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(samples.cols()); }
  int dim() const { return static_cast<int>(samples.rows()); }
  int class_count(int j) const {
    return static_cast<int>(std::count(labels.begin(), labels.end(), j));
  }
  std::vector<int> class_indices(int j) const {
    std::vector<int> idx;
    for (int m = 0; m < size(); ++m)
      if (labels[m] == j) idx.push_back(m);
    return idx;
  }
  CMatrix class_samples(int j) const {
    const auto idx = class_indices(j);
    CMatrix out(samples.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = samples.col(idx[i]);
    return out;
  }
};

/// Synthetic GM: class j covariance is B_j B_j^H / rank with B_j Haar-distributed
/// orthonormal columns, so tr(Sigma_j) = 1. Priors are uniform.
inline GMModel make_gm_model(const SystemConfig& cfg, int subspace_rank, std::uint64_t seed) {
  const int d = cfg.total_feature_dim();
  if (subspace_rank < 1 || subspace_rank > d)
    throw RankTooLarge("subspace rank " + std::to_string(subspace_rank) +
                       " outside [1, " + std::to_string(d) + "]");
  std::vector<double> priors(cfg.num_classes, 1.0 / cfg.num_classes);
  std::vector<CMatrix> covs;
  for (int j = 0; j < cfg.num_classes; ++j) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
    const CMatrix g = complex_normal_matrix(d, subspace_rank, rng);
    Eigen::HouseholderQR<CMatrix> qr(g);
    CMatrix q = qr.householderQ() * CMatrix::Identity(d, subspace_rank);
    const CMatrix& r = qr.matrixQR();
    for (int i = 0; i < subspace_rank; ++i) {
      const double a = std::abs(r(i, i));
      if (a > 0.0) q.col(i) *= r(i, i) / a;  // unique (Haar) phase convention
    }
    covs.push_back(hermitian_part(q * q.adjoint()) / static_cast<double>(subspace_rank));
  }
  return GMModel::from_components(std::move(priors), std::move(covs));
}

/// Draws M labelled samples z | y=j ~ CN(0, Sigma_j); optionally projects each
/// column to the unit sphere.
inline FeatureBatch sample_features(const GMModel& gm, int m, bool normalize, std::uint64_t seed) {
  if (m < 1) throw DimensionMismatch("sample_features needs M >= 1");
  Rng rng = make_rng(seed);
  std::discrete_distribution<int> pick(gm.priors.begin(), gm.priors.end());
  std::vector<CMatrix> roots;
  for (const auto& c : gm.class_covs) roots.push_back(matrix_sqrt_psd(c));
  FeatureBatch b;
  b.num_classes = gm.num_classes();
  b.samples.resize(gm.dim(), m);
  b.labels.resize(m);
  for (int i = 0; i < m; ++i) {
    const int y = pick(rng);
    b.labels[i] = y;
    b.samples.col(i) = roots[y] * complex_normal_matrix(gm.dim(), 1, rng);
    if (normalize) {
      const double n = b.samples.col(i).norm();
      if (!(n > 0.0)) throw NumericError("cannot normalize a zero feature column");
      b.samples.col(i) /= n;
    }
  }
  return b;
}

/// Rician channel per device: path-loss-scaled mix of LoS and CN(0,1) NLoS.
/// With O > 1 slots each H_k is block-diagonal over slots; hold_channel repeats
/// the slot-1 block.
inline ChannelState sample_channel(const RicianParams& params, const SystemConfig& cfg,
                                   double sigma, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const double los_w = std::sqrt(params.kappa / (params.kappa + 1.0));
  const double nlos_w = std::sqrt(1.0 / (params.kappa + 1.0));
  const double gain = params.amplitude_gain();
  std::vector<CMatrix> blocks;
  for (int k = 0; k < cfg.num_devices; ++k) {
    const int nr = cfg.rx_antennas, nt = cfg.tx_antennas[k];
    const CMatrix los = los_component(k, cfg.num_devices, nr, nt);
    std::vector<CMatrix> per_slot;
    for (int o = 0; o < cfg.slots; ++o) {
      if (o > 0 && params.hold_channel) {
        per_slot.push_back(per_slot.front());
        continue;
      }
      const CMatrix nlos = complex_normal_matrix(nr, nt, rng);
      per_slot.push_back(gain * (los_w * los + nlos_w * nlos));
    }
    blocks.push_back(block_diagonal(per_slot));
  }
  return ChannelState(std::move(blocks), sigma, cfg.slots);
}

/// Noise-free part H * blockdiag(V) * z.
inline CVector noiseless_receive(const CVector& z, const PrecoderSet& v, const ChannelState& ch) {
  if (v.num_devices() != ch.num_devices())
    throw DimensionMismatch("transmit: precoder and channel device counts differ");
  Eigen::Index off = 0;
  for (int k = 0; k < v.num_devices(); ++k) {
    if (v.blocks[k].rows() != ch.block(k).cols())
      throw DimensionMismatch("transmit: precoder block " + std::to_string(k) +
                              " does not match channel dimensions");
    off += v.blocks[k].cols();
  }
  if (off != z.size()) throw DimensionMismatch("transmit: feature length mismatch");
  // Assembled product: identical arithmetic for K devices and for one concatenated device.
  return ch.assembled() * (v.assembled() * z);
}

inline CVector complex_noise(Eigen::Index n, double sigma, Rng& rng) {
  CVector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = sigma * complex_normal(rng);
  return w;
}

/// r = H blockdiag(V) z + n, n ~ CN(0, sigma^2 I).
inline CVector transmit(const CVector& z, const PrecoderSet& v, const ChannelState& ch,
                        std::uint64_t seed) {
  Rng rng = make_rng(seed);
  CVector r = noiseless_receive(z, v, ch);
  return r + complex_noise(r.size(), ch.sigma(), rng);
}

}  // namespace taskcomm
