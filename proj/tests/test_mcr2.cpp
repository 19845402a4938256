#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "taskcomm/mcr2.hpp"

using namespace taskcomm;

namespace {

FeatureBatch random_batch(int d, int m, int classes, std::uint64_t seed, bool normalize = true) {
  SystemConfig cfg = SystemConfig::uniform(1, classes, d, 1, 1, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, std::max(1, d / 2), seed);
  FeatureBatch b = sample_features(gm, m, normalize, derive_seed(seed, 99));
  for (int j = 0; j < classes; ++j) b.labels[j] = j;  // every class non-empty
  return b;
}

// Generic position: iid complex Gaussian columns, labels cycling through the classes.
FeatureBatch gaussian_batch(int d, int m, int classes, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  FeatureBatch b;
  b.samples = complex_normal_matrix(d, m, rng);
  b.num_classes = classes;
  for (int i = 0; i < m; ++i) b.labels.push_back(i % classes);
  return b;
}

// Central finite differences; returns (df/dx + i df/dy) / 2 to compare with the
// gradient with respect to conj(Z).
CMatrix fd_gradient(FeatureBatch b, double eps2, double h) {
  CMatrix g(b.samples.rows(), b.samples.cols());
  for (Eigen::Index j = 0; j < b.samples.cols(); ++j)
    for (Eigen::Index i = 0; i < b.samples.rows(); ++i) {
      const cd orig = b.samples(i, j);
      b.samples(i, j) = orig + h;
      const double fxp = feature_mcr2(b, eps2);
      b.samples(i, j) = orig - h;
      const double fxm = feature_mcr2(b, eps2);
      b.samples(i, j) = orig + cd(0, h);
      const double fyp = feature_mcr2(b, eps2);
      b.samples(i, j) = orig - cd(0, h);
      const double fym = feature_mcr2(b, eps2);
      b.samples(i, j) = orig;
      g(i, j) = 0.5 * cd((fxp - fxm) / (2 * h), (fyp - fym) / (2 * h));
    }
  return g;
}

double mean_cross_class_inner(const FeatureBatch& b) {
  double acc = 0.0;
  int n = 0;
  for (int a = 0; a < b.size(); ++a)
    for (int c = a + 1; c < b.size(); ++c)
      if (b.labels[a] != b.labels[c]) {
        acc += std::abs(b.samples.col(a).dot(b.samples.col(c)));
        ++n;
      }
  return acc / n;
}

}  // namespace

TEST(FeatureMcr2, ZeroSamplesGiveZero) {
  FeatureBatch b;
  b.samples = CMatrix::Zero(3, 4);
  b.labels = {0, 1, 0, 1};
  b.num_classes = 2;
  EXPECT_DOUBLE_EQ(feature_mcr2(b, 0.5), 0.0);
}

TEST(FeatureMcr2, SingleClassIsZero) {
  FeatureBatch b = random_batch(4, 30, 1, 3);
  EXPECT_NEAR(feature_mcr2(b, 0.5), 0.0, 1e-12);
}

TEST(FeatureMcr2, HandEvaluation) {
  FeatureBatch b;
  b.samples = CMatrix::Identity(2, 2);
  b.labels = {0, 1};
  b.num_classes = 2;
  EXPECT_NEAR(feature_mcr2(b, 1.0), 2.0 * std::log(2.0) - std::log(3.0), 1e-12);
}

TEST(FeatureMcr2, EmptyClassRejected) {
  FeatureBatch b;
  b.samples = CMatrix::Identity(2, 2);
  b.labels = {0, 0};
  b.num_classes = 2;
  EXPECT_THROW(feature_mcr2(b, 1.0), EmptyClass);
  EXPECT_THROW(feature_mcr2_grad(b, 1.0), EmptyClass);
}

TEST(FeatureMcr2, InvariantUnderRelabelingAndRotation) {
  Rng rng = make_rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    FeatureBatch b = random_batch(5, 40, 3, 100 + rep);
    const double base = feature_mcr2(b, 0.5);
    FeatureBatch relabeled = b;
    for (int& y : relabeled.labels) y = (y + 1) % 3;
    EXPECT_NEAR(feature_mcr2(relabeled, 0.5), base, 1e-9);
    Eigen::HouseholderQR<CMatrix> qr(complex_normal_matrix(5, 5, rng));
    const CMatrix q = qr.householderQ();
    FeatureBatch rotated = b;
    rotated.samples = q * b.samples;
    EXPECT_NEAR(feature_mcr2(rotated, 0.5), base, 1e-9);
  }
}

TEST(FeatureMcr2Grad, ZeroAtZero) {
  FeatureBatch b;
  b.samples = CMatrix::Zero(3, 4);
  b.labels = {0, 1, 0, 1};
  b.num_classes = 2;
  EXPECT_EQ(feature_mcr2_grad(b, 0.5).norm(), 0.0);
}

TEST(FeatureMcr2Grad, MatchesFiniteDifferences) {
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 2 + rep % 3;
    FeatureBatch b = gaussian_batch(d, 6, 2, 500 + rep);
    const CMatrix g = feature_mcr2_grad(b, 0.5);
    const CMatrix fd = fd_gradient(b, 0.5, 1e-5);
    const double rel = (g - fd).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff();
    EXPECT_LT(rel, 1e-6) << "instance " << rep;
  }
}

TEST(FeatureMcr2Grad, SingleClassCancels) {
  FeatureBatch b = random_batch(3, 10, 1, 8);
  EXPECT_LT(feature_mcr2_grad(b, 0.5).norm(), 1e-12);
}

TEST(OptimizeFeatures, ZeroStepsIsIdentity) {
  FeatureBatch b = random_batch(4, 20, 2, 5);
  const auto r = optimize_features(b, 0.5, 0, 0.1);
  EXPECT_EQ(r.batch.samples, b.samples);
  EXPECT_EQ(r.initial_objective, r.final_objective);
}

TEST(OptimizeFeatures, AscendsAndSeparatesClasses) {
  int improved = 0;
  double inner_before = 0.0, inner_after = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    FeatureBatch b = random_batch(8, 200, 2, 1000 + seed);
    const auto r = optimize_features(b, 0.5, 500, 0.1);
    if (r.final_objective > r.initial_objective) ++improved;
    inner_before += mean_cross_class_inner(b);
    inner_after += mean_cross_class_inner(r.batch);
    for (int m = 0; m < r.batch.size(); ++m)
      ASSERT_NEAR(r.batch.samples.col(m).norm(), 1.0, 1e-12);
  }
  EXPECT_GE(improved, 99);
  EXPECT_LT(inner_after, inner_before);
}

TEST(OptimizeFeatures, ReturnsEmpiricalStatistics) {
  FeatureBatch b = random_batch(4, 50, 3, 6);
  const auto r = optimize_features(b, 0.5, 10, 0.1);
  const CMatrix& z = r.batch.samples;
  EXPECT_LT((r.statistics.global_cov - z * z.adjoint() / 50.0).norm(), 1e-12);
  for (int j = 0; j < 3; ++j) {
    const CMatrix zj = r.batch.class_samples(j);
    EXPECT_LT((r.statistics.class_covs[j] - zj * zj.adjoint() / double(zj.cols())).norm(), 1e-12);
    EXPECT_NEAR(r.statistics.priors[j], zj.cols() / 50.0, 1e-15);
  }
}

TEST(ChannelMcr2, ZeroPrecoderGivesZero) {
  SystemConfig cfg = SystemConfig::uniform(2, 3, 2, 2, 3, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, 2, 1);
  RicianParams p;
  p.pathloss_db = 0.0;
  const ChannelState ch = sample_channel(p, cfg, 0.3, 2);
  PrecoderSet v{{CMatrix::Zero(2, 2), CMatrix::Zero(2, 2)}, {1.0, 1.0}};
  EXPECT_EQ(channel_mcr2(v, ch, gm, 1e-6), 0.0);
}

TEST(ChannelMcr2, SingleClassGivesZero) {
  SystemConfig cfg = SystemConfig::uniform(1, 1, 3, 2, 3, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, 2, 1);
  RicianParams p;
  p.pathloss_db = 0.0;
  const ChannelState ch = sample_channel(p, cfg, 0.3, 2);
  EXPECT_NEAR(channel_mcr2(random_feasible_precoder(cfg, gm, 4), ch, gm, 1e-2), 0.0, 1e-12);
}

TEST(ChannelMcr2, ScalarHandEvaluation) {
  const GMModel gm = GMModel::from_components({0.5, 0.5}, {CMatrix::Constant(1, 1, 2.0),
                                                          CMatrix::Zero(1, 1)});
  const ChannelState ch({CMatrix::Ones(1, 1)}, 0.0);
  PrecoderSet v{{CMatrix::Ones(1, 1)}, {1.0}};
  // alpha = N_r / eps2 = 1, gamma = 1.
  EXPECT_NEAR(channel_mcr2(v, ch, gm, 1.0), std::log(2.0) - 0.5 * std::log(3.0), 1e-12);
}

TEST(ChannelMcr2, InvariantUnderClassPermutation) {
  SystemConfig cfg = SystemConfig::uniform(2, 3, 2, 2, 3, 1, 1.0);
  GMModel gm = make_gm_model(cfg, 2, 1);
  gm = GMModel::from_components({0.2, 0.3, 0.5}, gm.class_covs);
  RicianParams p;
  p.pathloss_db = 0.0;
  const ChannelState ch = sample_channel(p, cfg, 0.3, 2);
  const PrecoderSet v = random_feasible_precoder(cfg, gm, 3);
  const GMModel perm = GMModel::from_components(
      {gm.priors[2], gm.priors[0], gm.priors[1]},
      {gm.class_covs[2], gm.class_covs[0], gm.class_covs[1]});
  EXPECT_NEAR(channel_mcr2(v, ch, perm, 1e-3), channel_mcr2(v, ch, gm, 1e-3), 1e-10);
}

TEST(ChannelMcr2Batch, ReducesToSingleAndAverages) {
  SystemConfig cfg = SystemConfig::uniform(1, 2, 3, 2, 2, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, 2, 1);
  RicianParams p;
  p.pathloss_db = 0.0;
  std::vector<ChannelState> chans;
  std::vector<std::vector<PrecoderSet>> pre;
  const std::vector<double> noise{0.2, 0.9};
  for (int n = 0; n < 3; ++n) {
    chans.push_back(sample_channel(p, cfg, 1.0, 10 + n));
    pre.push_back({random_feasible_precoder(cfg, gm, 20 + n), random_feasible_precoder(cfg, gm, 30 + n)});
  }
  const double single = channel_mcr2(pre[0][0], chans[0].with_sigma(0.2), gm, 0.01);
  EXPECT_DOUBLE_EQ(channel_mcr2_batch({{pre[0][0]}}, {chans[0]}, {0.2}, gm, 0.01), single);
  EXPECT_NEAR(channel_mcr2_batch({{pre[0][0]}, {pre[0][0]}}, {chans[0], chans[0]}, {0.2}, gm, 0.01),
              single, 1e-15);

  // Independent re-summation with explicit alpha/gamma.
  double oracle = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int e = 0; e < 2; ++e) {
      const double alpha = 2.0 / 0.01;
      const double gamma = 1.0 + alpha * noise[e] * noise[e];
      const CMatrix hv = chans[n].assembled() * pre[n][e].assembled();
      const CMatrix i2 = CMatrix::Identity(2, 2);
      double t = std::log((gamma * i2 + alpha * hv * gm.global_cov * hv.adjoint()).determinant().real());
      for (int j = 0; j < 2; ++j)
        t -= gm.priors[j] *
             std::log((gamma * i2 + alpha * hv * gm.class_covs[j] * hv.adjoint()).determinant().real());
      oracle += t;
    }
  oracle /= 6.0;
  EXPECT_NEAR(channel_mcr2_batch(pre, chans, noise, gm, 0.01), oracle, 1e-12);
}
