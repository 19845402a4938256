#pragma once

// JSON artifacts passed between pipeline stages. Complex matrices are stored
// as {"rows", "cols", "data": [[re, im], ...]} in column-major order.

#include <fstream>
#include <string>

#include "json.hpp"

#include "taskcomm/unfolded.hpp"

namespace taskcomm {

using json = nlohmann::json;

inline constexpr int kArtifactVersion = 1;

inline json matrix_to_json(const CMatrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) data.push_back({m.data()[i].real(), m.data()[i].imag()});
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline CMatrix matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    throw ConfigError("matrix entry count does not match its shape");
  CMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = cd(data[i].at(0).get<double>(), data[i].at(1).get<double>());
  return m;
}

inline json config_to_json(const SystemConfig& c) {
  return {{"num_devices", c.num_devices},   {"num_classes", c.num_classes},
          {"feature_dims", c.feature_dims}, {"tx_antennas", c.tx_antennas},
          {"rx_antennas", c.rx_antennas},   {"slots", c.slots},
          {"power_budgets", c.power_budgets}, {"eps2_feature", c.eps2_feature},
          {"eps2_precoding", c.eps2_precoding}};
}

inline SystemConfig config_from_json(const json& j) {
  SystemConfig c;
  c.num_devices = j.at("num_devices").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.feature_dims = j.at("feature_dims").get<std::vector<int>>();
  c.tx_antennas = j.at("tx_antennas").get<std::vector<int>>();
  c.rx_antennas = j.at("rx_antennas").get<int>();
  c.slots = j.at("slots").get<int>();
  c.power_budgets = j.at("power_budgets").get<std::vector<double>>();
  c.eps2_feature = j.at("eps2_feature").get<double>();
  c.eps2_precoding = j.at("eps2_precoding").get<double>();
  c.validate();
  return c;
}

namespace detail {

inline void check_header(const json& j, const std::string& kind) {
  if (j.value("kind", "") != kind) throw ConfigError("artifact is not a " + kind);
  if (j.value("version", 0) != kArtifactVersion)
    throw ConfigError(kind + " artifact has unsupported version " + std::to_string(j.value("version", 0)));
}

inline json approx_to_json(const InverseApproxParams& p) {
  return {{"xi1", matrix_to_json(p.xi1)}, {"xi2", matrix_to_json(p.xi2)}, {"xi3", matrix_to_json(p.xi3)}};
}

inline InverseApproxParams approx_from_json(const json& j) {
  return {matrix_from_json(j.at("xi1")), matrix_from_json(j.at("xi2")), matrix_from_json(j.at("xi3"))};
}

}  // namespace detail

inline json gm_to_json(const GMModel& gm) {
  json covs = json::array();
  for (const auto& c : gm.class_covs) covs.push_back(matrix_to_json(c));
  return {{"kind", "gm_model"}, {"version", kArtifactVersion}, {"dim", gm.dim()},
          {"priors", gm.priors}, {"class_covs", covs}};
}

inline GMModel gm_from_json(const json& j) {
  detail::check_header(j, "gm_model");
  std::vector<CMatrix> covs;
  for (const auto& c : j.at("class_covs")) covs.push_back(matrix_from_json(c));
  GMModel gm = GMModel::from_components(j.at("priors").get<std::vector<double>>(), std::move(covs));
  if (gm.dim() != j.at("dim").get<int>()) throw ConfigError("gm_model dimension header mismatch");
  return gm;
}

inline json channel_to_json(const ChannelState& ch) {
  json blocks = json::array();
  for (const auto& b : ch.blocks()) blocks.push_back(matrix_to_json(b));
  return {{"kind", "channel_state"}, {"version", kArtifactVersion}, {"sigma", ch.sigma()},
          {"slots", ch.slots()}, {"blocks", blocks}};
}

inline ChannelState channel_from_json(const json& j) {
  detail::check_header(j, "channel_state");
  std::vector<CMatrix> blocks;
  for (const auto& b : j.at("blocks")) blocks.push_back(matrix_from_json(b));
  return ChannelState(std::move(blocks), j.at("sigma").get<double>(), j.at("slots").get<int>());
}

inline json net_to_json(const UnfoldedNet& net) {
  json layers = json::array();
  for (const auto& l : net.bca_layers) {
    json omega = json::array(), lambda = json::array();
    for (std::size_t k = 0; k < l.omega.size(); ++k) {
      omega.push_back(detail::approx_to_json(l.omega[k]));
      lambda.push_back({l.lambda[k].real(), l.lambda[k].imag()});
    }
    layers.push_back({{"theta", detail::approx_to_json(l.theta)},
                      {"phi", detail::approx_to_json(l.phi)},
                      {"psi", detail::approx_to_json(l.psi)},
                      {"omega", omega},
                      {"lambda", lambda}});
  }
  for (const auto& l : net.mm_layers) {
    json upsilon = json::array();
    for (const auto& per_device : l.upsilon) {
      json subs = json::array();
      for (const auto& y : per_device) subs.push_back(matrix_to_json(y));
      upsilon.push_back(subs);
    }
    layers.push_back({{"theta", detail::approx_to_json(l.theta)},
                      {"phi", detail::approx_to_json(l.phi)},
                      {"psi", detail::approx_to_json(l.psi)},
                      {"upsilon", upsilon}});
  }
  return {{"kind", "unfolded_net"},
          {"version", kArtifactVersion},
          {"variant", variant_name(net.variant)},
          {"num_layers", net.num_layers()},
          {"mm_sublayers", net.mm_sublayers},
          {"config", config_to_json(net.config)},
          {"layers", layers}};
}

inline UnfoldedNet net_from_json(const json& j) {
  detail::check_header(j, "unfolded_net");
  const std::string v = j.at("variant").get<std::string>();
  UnfoldedVariant variant;
  if (v == "du-bca")
    variant = UnfoldedVariant::DuBca;
  else if (v == "du-bca-mm")
    variant = UnfoldedVariant::DuBcaMm;
  else
    throw ConfigError("unknown unfolded variant '" + v + "'");
  const int layers = j.at("num_layers").get<int>();
  if (j.at("layers").size() != static_cast<std::size_t>(layers))
    throw ConfigError("unfolded_net layer count header mismatch");
  // Shape template; every stored matrix must match it.
  UnfoldedNet net = make_unfolded_net(variant, config_from_json(j.at("config")), layers,
                                      j.at("mm_sublayers").get<int>());
  const UnfoldedNet shape = net;
  for (int l = 0; l < layers; ++l) {
    const json& jl = j.at("layers")[l];
    if (variant == UnfoldedVariant::DuBca) {
      auto& p = net.bca_layers[l];
      p.theta = detail::approx_from_json(jl.at("theta"));
      p.phi = detail::approx_from_json(jl.at("phi"));
      p.psi = detail::approx_from_json(jl.at("psi"));
      const json& om = jl.at("omega");
      const json& la = jl.at("lambda");
      if (om.size() != p.omega.size() || la.size() != p.lambda.size())
        throw ConfigError("unfolded_net device count mismatch");
      for (std::size_t k = 0; k < p.omega.size(); ++k) {
        p.omega[k] = detail::approx_from_json(om[k]);
        p.lambda[k] = cd(la[k].at(0).get<double>(), la[k].at(1).get<double>());
      }
    } else {
      auto& p = net.mm_layers[l];
      p.theta = detail::approx_from_json(jl.at("theta"));
      p.phi = detail::approx_from_json(jl.at("phi"));
      p.psi = detail::approx_from_json(jl.at("psi"));
      const json& up = jl.at("upsilon");
      if (up.size() != p.upsilon.size()) throw ConfigError("unfolded_net device count mismatch");
      for (std::size_t k = 0; k < p.upsilon.size(); ++k) {
        if (up[k].size() != p.upsilon[k].size()) throw ConfigError("unfolded_net sub-layer count mismatch");
        for (std::size_t i = 0; i < p.upsilon[k].size(); ++i) p.upsilon[k][i] = matrix_from_json(up[k][i]);
      }
    }
  }
  std::vector<Eigen::Index> want, got;
  visit_params(shape, [&](const cd*, Eigen::Index c) { want.push_back(c); });
  visit_params(net, [&](const cd*, Eigen::Index c) { got.push_back(c); });
  if (want != got) throw ConfigError("unfolded_net parameter shapes do not match the config");
  return net;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

inline json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "': file missing");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace taskcomm
