#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "support.hpp"
#include "taskcomm/serialize.hpp"

using namespace taskcomm;

namespace {

UnfoldedNet random_net(UnfoldedVariant variant, const SystemConfig& cfg, int layers, std::uint64_t seed) {
  UnfoldedNet net = make_unfolded_net(variant, cfg, layers, 3);
  RVector x = flatten(net);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = g(rng) * std::pow(10.0, (i % 7) - 3);
  unflatten(net, x);
  return net;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("taskcomm_" + name)).string();
}

}  // namespace

TEST(Serialize, MatrixRoundTripIsBitExact) {
  Rng rng = make_rng(1);
  for (int rows : {0, 1, 3}) {
    const CMatrix m = complex_normal_matrix(rows, 4, rng) * 1e-300 + complex_normal_matrix(rows, 4, rng);
    // through text, not just the in-memory tree
    const CMatrix back = matrix_from_json(json::parse(matrix_to_json(m).dump()));
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), m.cols());
    EXPECT_EQ(back, m);
  }
}

TEST(Serialize, MatrixShapeMismatchRejected) {
  json j = matrix_to_json(CMatrix::Identity(2, 2));
  j["rows"] = 3;
  EXPECT_THROW(matrix_from_json(j), ConfigError);
}

TEST(Serialize, GmModelRoundTrip) {
  const SystemConfig cfg = SystemConfig::uniform(2, 3, 2, 2, 4, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, 2, 11);
  const GMModel back = gm_from_json(json::parse(gm_to_json(gm).dump()));
  EXPECT_EQ(back.priors, gm.priors);
  ASSERT_EQ(back.class_covs.size(), gm.class_covs.size());
  for (std::size_t j = 0; j < gm.class_covs.size(); ++j) EXPECT_EQ(back.class_covs[j], gm.class_covs[j]);
  EXPECT_EQ(back.global_cov, gm.global_cov);
}

TEST(Serialize, ChannelRoundTrip) {
  const testsupport::Instance in = testsupport::make_instance(3, 2, 2, 2, 3, 2, 4.0, 2, 5);
  const ChannelState back = channel_from_json(json::parse(channel_to_json(in.ch).dump()));
  EXPECT_EQ(back.assembled(), in.ch.assembled());
  EXPECT_EQ(back.sigma(), in.ch.sigma());
  EXPECT_EQ(back.slots(), in.ch.slots());
}

TEST(Serialize, NetRoundTripBothVariants) {
  const SystemConfig cfg = SystemConfig::uniform(2, 3, 2, 2, 3, 2, 0.5);
  for (auto variant : {UnfoldedVariant::DuBca, UnfoldedVariant::DuBcaMm}) {
    const UnfoldedNet net = random_net(variant, cfg, 2, 3);
    const UnfoldedNet back = net_from_json(json::parse(net_to_json(net).dump()));
    EXPECT_EQ(back.variant, net.variant);
    EXPECT_EQ(back.num_layers(), 2);
    EXPECT_EQ(back.mm_sublayers, net.mm_sublayers);
    EXPECT_EQ(back.config.power_budgets, cfg.power_budgets);
    EXPECT_EQ(flatten(back), flatten(net));
  }
}

TEST(Serialize, WrongKindOrVersionRejected) {
  const SystemConfig cfg = SystemConfig::uniform(1, 2, 2, 1, 2, 1, 1.0);
  json j = gm_to_json(make_gm_model(cfg, 1, 2));
  EXPECT_THROW(net_from_json(j), ConfigError);
  j["version"] = kArtifactVersion + 1;
  EXPECT_THROW(gm_from_json(j), ConfigError);
}

TEST(Serialize, NetShapeMismatchRejected) {
  const SystemConfig cfg = SystemConfig::uniform(2, 2, 2, 2, 3, 1, 1.0);
  json j = net_to_json(random_net(UnfoldedVariant::DuBcaMm, cfg, 1, 4));
  j["config"]["rx_antennas"] = 4;
  EXPECT_THROW(net_from_json(j), ConfigError);

  json k = net_to_json(random_net(UnfoldedVariant::DuBca, cfg, 2, 4));
  k["num_layers"] = 3;
  EXPECT_THROW(net_from_json(k), ConfigError);

  json v = net_to_json(random_net(UnfoldedVariant::DuBca, cfg, 1, 4));
  v["variant"] = "resnet";
  EXPECT_THROW(net_from_json(v), ConfigError);
}

TEST(Serialize, FileRoundTripAndMissingFile) {
  const std::string path = temp_path("serialize_gm.json");
  const SystemConfig cfg = SystemConfig::uniform(1, 2, 2, 1, 2, 1, 1.0);
  const GMModel gm = make_gm_model(cfg, 1, 9);
  write_json(path, gm_to_json(gm));
  EXPECT_EQ(gm_from_json(read_json(path)).class_covs[1], gm.class_covs[1]);
  std::remove(path.c_str());
  try {
    read_json(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}
