#pragma once

// Experiment plumbing shared by the command-line runner: the settings schema,
// INI parsing, unit conversion, solver construction and result emission.
//
// Units. Configs carry dBm/dB. Internally every experiment runs in
// noise-normalized units: unit power budgets, no path loss, and the receiver
// noise std chosen so that SNR = P * PL / sigma^2 is preserved.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/uuid/detail/sha1.hpp>

#include "taskcomm/mcr2.hpp"
#include "taskcomm/serialize.hpp"
#include "taskcomm/unfolded.hpp"

namespace taskcomm {

/// A required input file from an earlier pipeline stage is absent.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

enum class ValueType { Int, Real, Bool, Text, IntList, RealList };

struct SettingSpec {
  const char* section;
  const char* key;
  ValueType type;
  const char* fallback;
  const char* doc;
};

inline const std::vector<SettingSpec>& settings_schema() {
  using V = ValueType;
  static const std::vector<SettingSpec> schema = {
      {"system", "devices", V::Int, "3", "number of devices K"},
      {"system", "classes", V::Int, "10", "number of classes J"},
      {"system", "feature_dim", V::IntList, "4", "feature dims D_k (one value applies to every device)"},
      {"system", "tx_antennas", V::IntList, "4", "transmit antennas N_t,k (one value applies to every device)"},
      {"system", "rx_antennas", V::Int, "8", "receive antennas N_r"},
      {"system", "slots", V::Int, "1", "transmit slots O"},
      {"system", "power_dbm", V::Real, "15", "per-device power budget P_0 in dBm"},
      {"system", "eps2_feature", V::Real, "0.5", "eps^2 of the feature-side rate reduction"},
      {"system", "eps2_precoding", V::Real, "1e-6", "eps^2 of the channel-side rate reduction"},
      {"system", "subspace_rank", V::Int, "2", "rank of each synthetic class covariance"},
      {"channel", "kappa", V::Real, "1", "Rician factor"},
      {"channel", "distance_m", V::Real, "80", "link distance; path loss 32.6 + 36.7 lg d dB"},
      {"channel", "noise_dbm", V::Real, "-80", "receiver noise variance in dBm"},
      {"channel", "hold_channel", V::Bool, "true", "identical channel in every slot when O > 1"},
      {"features", "samples", V::Int, "512", "feature samples used when steps > 0"},
      {"features", "steps", V::Int, "0", "rate-reduction ascent steps; 0 keeps the synthetic mixture"},
      {"features", "lr", V::Real, "0.1", "ascent step size"},
      {"solver", "name", V::Text, "bca-mm", "bca | bca-mm | du-bca | du-bca-mm"},
      {"solver", "max_iters", V::Int, "50", "outer iterations of bca / bca-mm"},
      {"solver", "tol", V::Real, "1e-8", "relative objective change that stops bca / bca-mm"},
      {"solver", "inner_iters", V::Int, "20", "MM iterations per V-step of bca-mm"},
      {"unfolded", "layers", V::Int, "6", "unfolded layers L"},
      {"unfolded", "mm_sublayers", V::Int, "2", "MM sub-layers I of du-bca-mm"},
      {"unfolded", "train_channels", V::Int, "50", "training channels"},
      {"unfolded", "pretrain_steps", V::Int, "1000", "SPSA steps on the rate reduction"},
      {"unfolded", "pretrain_step", V::Real, "0.05", "size of the first pretraining step"},
      {"unfolded", "perturbation", V::Real, "0.05", "SPSA perturbation size c"},
      {"unfolded", "finetune_steps", V::Int, "300", "SPSA steps on the end-to-end loss"},
      {"unfolded", "finetune_step", V::Real, "0.02", "size of the first fine-tuning step"},
      {"unfolded", "batch_samples", V::Int, "512", "feature samples per fine-tuning step"},
      {"unfolded", "validation_samples", V::Int, "4096", "samples of the fixed fine-tuning reference batch"},
      {"unfolded", "eval_every", V::Int, "10", "steps between reference evaluations (best iterate kept)"},
      {"evaluate", "channels", V::Int, "100", "test channels per point"},
      {"evaluate", "samples", V::Int, "100", "feature samples per test channel"},
      {"evaluate", "noise_draws", V::Int, "1", "noise draws per feature sample"},
      {"sweep", "snr_db", V::RealList, "", "SNR points in dB; empty uses the SNR implied by the system"},
      {"sweep", "slots", V::IntList, "", "slot counts O; empty uses system.slots"},
      {"run", "seed", V::Int, "1", "master seed"},
      {"run", "threads", V::Int, "0", "worker threads; 0 uses TASKCOMM_THREADS, else all cores"},
      {"run", "record_wall_time", V::Bool, "false", "fill wall_ms (makes the CSV run-dependent)"},
  };
  return schema;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline long long parse_int(const std::string& text, const std::string& where) {
  const std::string s = trim(text);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(where + ": expected an integer, got '" + text + "'");
  return v;
}

inline double parse_real(const std::string& text, const std::string& where) {
  const std::string s = trim(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw ConfigError(where + ": expected a number, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text, const std::string& where) {
  std::string s = trim(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline json parse_value(const SettingSpec& s, const std::string& text) {
  const std::string where = std::string(s.section) + "." + s.key;
  switch (s.type) {
    case ValueType::Int: return parse_int(text, where);
    case ValueType::Real: return parse_real(text, where);
    case ValueType::Bool: return parse_bool(text, where);
    case ValueType::Text: return trim(text);
    case ValueType::IntList: {
      json a = json::array();
      for (const auto& item : split_list(text)) a.push_back(parse_int(item, where));
      return a;
    }
    case ValueType::RealList: {
      json a = json::array();
      for (const auto& item : split_list(text)) a.push_back(parse_real(item, where));
      return a;
    }
  }
  return nullptr;
}

inline const SettingSpec* find_setting(const std::string& section, const std::string& key) {
  for (const auto& s : settings_schema())
    if (section == s.section && key == s.key) return &s;
  return nullptr;
}

}  // namespace detail

/// Every setting at its default.
inline json default_settings() {
  json j = json::object();
  for (const auto& s : settings_schema()) j[s.section][s.key] = detail::parse_value(s, s.fallback);
  return j;
}

/// Replaces one setting from its text form.
inline void set_setting(json& settings, const std::string& section, const std::string& key,
                        const std::string& text) {
  const SettingSpec* s = detail::find_setting(section, key);
  if (!s) throw ConfigError("unknown setting '" + section + "." + key + "'");
  settings[section][key] = detail::parse_value(*s, text);
}

inline void validate_settings(const json& settings);

/// Defaults overlaid with an INI file ([section] then key = value).
/// An empty path gives the defaults.
inline json load_settings(const std::string& path) {
  json settings = default_settings();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path + "' not found");
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("setting '" + section + "' must live inside a [section]");
      for (const auto& [key, value] : body) set_setting(settings, section, key, value.data());
    }
  }
  validate_settings(settings);
  return settings;
}

inline double pathloss_db(double distance_m) { return 32.6 + 36.7 * std::log10(distance_m); }

/// SNR = P * PL / sigma^2 in dB for the configured power, distance and noise.
inline double implied_snr_db(const json& settings) {
  return settings["system"]["power_dbm"].get<double>() -
         pathloss_db(settings["channel"]["distance_m"].get<double>()) -
         settings["channel"]["noise_dbm"].get<double>();
}

/// Receiver noise std in noise-normalized units (unit power, unit path gain).
inline double noise_sigma(double snr_db) { return std::sqrt(std::pow(10.0, -snr_db / 10.0)); }

inline std::vector<int> per_device(const json& list, int devices, const std::string& name) {
  const auto v = list.get<std::vector<int>>();
  if (v.size() == 1) return std::vector<int>(devices, v.front());
  if (v.size() != static_cast<std::size_t>(devices))
    throw ConfigError(name + ": give one value or one per device");
  return v;
}

/// Normalized system: every budget is 1.
inline SystemConfig system_config(const json& settings, int slots) {
  const json& s = settings.at("system");
  SystemConfig c;
  c.num_devices = s["devices"].get<int>();
  c.num_classes = s["classes"].get<int>();
  if (c.num_devices < 1) throw ConfigError("system.devices must be >= 1");
  c.feature_dims = per_device(s["feature_dim"], c.num_devices, "system.feature_dim");
  c.tx_antennas = per_device(s["tx_antennas"], c.num_devices, "system.tx_antennas");
  c.rx_antennas = s["rx_antennas"].get<int>();
  c.slots = slots;
  c.power_budgets.assign(c.num_devices, 1.0);
  c.eps2_feature = s["eps2_feature"].get<double>();
  c.eps2_precoding = s["eps2_precoding"].get<double>();
  try {
    c.validate();
  } catch (const DimensionMismatch& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RicianParams channel_params(const json& settings) {
  RicianParams p;
  p.kappa = settings["channel"]["kappa"].get<double>();
  p.distance_m = settings["channel"]["distance_m"].get<double>();
  p.pathloss_db = 0.0;  // carried by the SNR
  p.hold_channel = settings["channel"]["hold_channel"].get<bool>();
  return p;
}

struct SweepPoint {
  int slots = 1;
  double snr_db = 0.0;
};

/// Slots outer, SNR inner, in the order written.
inline std::vector<SweepPoint> sweep_points(const json& settings) {
  auto snrs = settings["sweep"]["snr_db"].get<std::vector<double>>();
  auto slots = settings["sweep"]["slots"].get<std::vector<int>>();
  if (snrs.empty()) snrs.push_back(implied_snr_db(settings));
  if (slots.empty()) slots.push_back(settings["system"]["slots"].get<int>());
  std::vector<SweepPoint> out;
  for (int o : slots)
    for (double s : snrs) out.push_back({o, s});
  return out;
}

inline bool is_unfolded_solver(const std::string& name) { return name == "du-bca" || name == "du-bca-mm"; }

inline UnfoldedVariant solver_variant(const std::string& name) {
  if (name == "du-bca") return UnfoldedVariant::DuBca;
  if (name == "du-bca-mm") return UnfoldedVariant::DuBcaMm;
  throw ConfigError("'" + name + "' is not an unfolded solver");
}

inline void validate_settings(const json& settings) {
  auto positive = [&](const char* section, const char* key) {
    if (settings[section][key].get<long long>() < 1)
      throw ConfigError(std::string(section) + "." + key + " must be >= 1");
  };
  auto non_negative = [&](const char* section, const char* key) {
    if (settings[section][key].get<long long>() < 0)
      throw ConfigError(std::string(section) + "." + key + " must be >= 0");
  };
  const std::string solver = settings["solver"]["name"].get<std::string>();
  if (solver != "bca" && solver != "bca-mm" && !is_unfolded_solver(solver))
    throw ConfigError("solver.name must be one of bca, bca-mm, du-bca, du-bca-mm (got '" + solver + "')");
  for (const char* k : {"devices", "classes", "rx_antennas", "slots", "subspace_rank"}) positive("system", k);
  for (const char* k : {"samples"}) positive("features", k);
  non_negative("features", "steps");
  for (const char* k : {"max_iters", "inner_iters"}) positive("solver", k);
  for (const char* k : {"layers", "mm_sublayers", "train_channels", "batch_samples", "validation_samples",
                        "eval_every"})
    positive("unfolded", k);
  non_negative("unfolded", "pretrain_steps");
  non_negative("unfolded", "finetune_steps");
  for (const char* k : {"channels", "samples", "noise_draws"}) positive("evaluate", k);
  non_negative("run", "seed");
  non_negative("run", "threads");
  if (!(settings["channel"]["kappa"].get<double>() >= 0.0)) throw ConfigError("channel.kappa must be >= 0");
  if (!(settings["channel"]["distance_m"].get<double>() > 0.0))
    throw ConfigError("channel.distance_m must be > 0");
  for (const char* k : {"pretrain_step", "perturbation", "finetune_step"})
    if (!(settings["unfolded"][k].get<double>() > 0.0))
      throw ConfigError(std::string("unfolded.") + k + " must be > 0");
  for (int o : settings["sweep"]["slots"].get<std::vector<int>>())
    if (o < 1) throw ConfigError("sweep.slots entries must be >= 1");
  const SystemConfig c = system_config(settings, settings["system"]["slots"].get<int>());
  if (settings["system"]["subspace_rank"].get<int>() > c.total_feature_dim())
    throw ConfigError("system.subspace_rank exceeds the total feature dimension");
}

/// Stream indices below the master seed.
enum class SeedStream : std::uint64_t { Features = 1, TrainChannels = 2, Pretrain = 3, Finetune = 4, Evaluate = 5 };

inline std::uint64_t stream_seed(const json& settings, SeedStream s) {
  return derive_seed(settings["run"]["seed"].get<std::uint64_t>(), static_cast<std::uint64_t>(s));
}

/// Feature statistics: the synthetic mixture, or the statistics of samples
/// after rate-reduction ascent when features.steps > 0.
inline GMModel build_feature_model(const json& settings) {
  const SystemConfig cfg = system_config(settings, 1);
  const std::uint64_t seed = stream_seed(settings, SeedStream::Features);
  const GMModel synthetic = make_gm_model(cfg, settings["system"]["subspace_rank"].get<int>(), seed);
  const int steps = settings["features"]["steps"].get<int>();
  if (steps == 0) return synthetic;
  const FeatureBatch init =
      sample_features(synthetic, settings["features"]["samples"].get<int>(), true, derive_seed(seed, 1));
  for (int j = 0; j < cfg.num_classes; ++j)
    if (init.class_count(j) == 0)
      throw ConfigError("features.samples is too small: class " + std::to_string(j) + " drew no samples");
  return optimize_features(init, cfg.eps2_feature, steps, settings["features"]["lr"].get<double>()).statistics;
}

inline std::vector<ChannelState> training_channels(const json& settings, const SystemConfig& cfg, double sigma) {
  const std::uint64_t seed = stream_seed(settings, SeedStream::TrainChannels);
  const RicianParams p = channel_params(settings);
  std::vector<ChannelState> out;
  for (int n = 0; n < settings["unfolded"]["train_channels"].get<int>(); ++n)
    out.push_back(sample_channel(p, cfg, sigma, derive_seed(seed, n)));
  return out;
}

inline TrainerConfig trainer_config(const json& settings, bool finetune, int threads) {
  const json& u = settings["unfolded"];
  TrainerConfig tc;
  tc.threads = threads;
  tc.spsa.steps = u[finetune ? "finetune_steps" : "pretrain_steps"].get<int>();
  tc.spsa.initial_step = u[finetune ? "finetune_step" : "pretrain_step"].get<double>();
  tc.spsa.c = u["perturbation"].get<double>();
  tc.spsa.eval_every = u["eval_every"].get<int>();
  tc.batch_samples = u["batch_samples"].get<int>();
  tc.validation_samples = u["validation_samples"].get<int>();
  return tc;
}

/// Data-driven initialization followed by rate-reduction pretraining.
inline UnfoldedNet pretrain_precoder(const json& settings, const GMModel& gm, const SweepPoint& point,
                                     int threads, TrainingReport* report = nullptr) {
  const SystemConfig cfg = system_config(settings, point.slots);
  if (gm.dim() != cfg.total_feature_dim())
    throw ConfigError("feature model dimension does not match the system settings");
  const double sigma = noise_sigma(point.snr_db);
  const auto channels = training_channels(settings, cfg, sigma);
  std::vector<PrecoderSet> inits;
  for (const auto& ch : channels) inits.push_back(channel_init(cfg, gm, ch));
  const auto variant = solver_variant(settings["solver"]["name"].get<std::string>());
  const UnfoldedNet init = init_unfolded(
      variant, training_contexts(cfg, channels, {sigma}, gm, cfg.eps2_precoding), inits,
      settings["unfolded"]["layers"].get<int>(), settings["unfolded"]["mm_sublayers"].get<int>());
  return train_unfolded(init, channels, {sigma}, gm, cfg.eps2_precoding, trainer_config(settings, false, threads),
                        stream_seed(settings, SeedStream::Pretrain), report);
}

/// End-to-end fine-tuning on the same training channels.
inline UnfoldedNet finetune_precoder(const json& settings, const UnfoldedNet& net, const GMModel& gm,
                                     const SweepPoint& point, int threads, TrainingReport* report = nullptr) {
  const SystemConfig cfg = system_config(settings, point.slots);
  if (gm.dim() != cfg.total_feature_dim() || net.config.rx_dim() != cfg.rx_dim() ||
      net.config.total_feature_dim() != cfg.total_feature_dim())
    throw ConfigError("stored network or feature model does not match the system settings");
  const double sigma = noise_sigma(point.snr_db);
  return e2e_finetune(net, gm, training_channels(settings, cfg, sigma), {sigma},
                      trainer_config(settings, true, threads), stream_seed(settings, SeedStream::Finetune),
                      report);
}

/// Precoder computation for the configured solver. Unfolded solvers need a net.
inline PrecoderSolver make_solver(const json& settings, const UnfoldedNet* net) {
  const std::string name = settings["solver"]["name"].get<std::string>();
  const json& s = settings["solver"];
  if (name == "bca") {
    BcaOptions o;
    o.max_iters = s["max_iters"].get<int>();
    o.tol = s["tol"].get<double>();
    return [o](const PrecodingContext& ctx, const PrecoderSet& v0) { return bca_solve(ctx, v0, o).v; };
  }
  if (name == "bca-mm") {
    MmOptions o;
    o.max_iters = s["max_iters"].get<int>();
    o.tol = s["tol"].get<double>();
    o.inner_iters = s["inner_iters"].get<int>();
    return [o](const PrecodingContext& ctx, const PrecoderSet& v0) { return bca_mm_solve(ctx, v0, o).v; };
  }
  if (!net) throw MissingArtifact("solver '" + name + "' needs a trained network");
  if (net->variant != solver_variant(name))
    throw ConfigError("stored network is " + variant_name(net->variant) + " but solver.name is " + name);
  const UnfoldedNet copy = *net;
  return [copy](const PrecodingContext& ctx, const PrecoderSet& v0) { return du_forward(copy, ctx, v0); };
}

struct ResultRow {
  int run_id = 0;
  std::string solver;
  SystemConfig cfg;
  double snr_db = 0.0;
  double power_dbm = 0.0;
  int layers = 0;       // L, or the iteration cap of bca / bca-mm
  int sublayers = 0;    // I, or the inner MM iterations (0 for bca)
  std::uint64_t seed = 0;
  AccuracyStats stats;
  double wall_ms = -1.0;  // < 0 prints NA
};

/// Monte-Carlo evaluation on test channels common to every solver and point.
inline ResultRow evaluate_point(const json& settings, const GMModel& gm, const SweepPoint& point,
                                const UnfoldedNet* net, int run_id, int threads) {
  const auto start = std::chrono::steady_clock::now();
  const SystemConfig cfg = system_config(settings, point.slots);
  if (gm.dim() != cfg.total_feature_dim())
    throw ConfigError("feature model dimension does not match the system settings");
  if (net && (net->config.rx_dim() != cfg.rx_dim() || net->config.total_feature_dim() != cfg.total_feature_dim()))
    throw ConfigError("stored network was built for different dimensions (slots, antennas or features)");
  EvaluationSpec spec;
  spec.n_channels = settings["evaluate"]["channels"].get<int>();
  spec.samples_per_channel = settings["evaluate"]["samples"].get<int>();
  spec.noise_draws = settings["evaluate"]["noise_draws"].get<int>();
  spec.threads = threads;
  ResultRow row;
  row.run_id = run_id;
  row.solver = settings["solver"]["name"].get<std::string>();
  row.cfg = cfg;
  row.snr_db = point.snr_db;
  row.power_dbm = settings["system"]["power_dbm"].get<double>();
  if (net) {
    row.layers = net->num_layers();
    row.sublayers = net->variant == UnfoldedVariant::DuBcaMm ? net->mm_sublayers : 0;
  } else {
    row.layers = settings["solver"]["max_iters"].get<int>();
    row.sublayers = row.solver == "bca-mm" ? settings["solver"]["inner_iters"].get<int>() : 0;
  }
  row.seed = settings["run"]["seed"].get<std::uint64_t>();
  row.stats = evaluate_accuracy(make_solver(settings, net), gm, channel_params(settings), cfg,
                                noise_sigma(point.snr_db), spec, stream_seed(settings, SeedStream::Evaluate));
  if (settings["run"]["record_wall_time"].get<bool>())
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

inline std::string csv_header() {
  return "run_id,solver,K,D,N_t,N_r,O,snr_db,P_dbm,L,I,seed,objective_mcr2,accuracy_mean,accuracy_stderr,wall_ms";
}

namespace detail {

inline std::string num(double x, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + std::to_string(v[i]);
  return out;
}

/// One value when all devices agree, else a ';'-separated list.
inline std::string device_list(const std::vector<int>& v) {
  return std::all_of(v.begin(), v.end(), [&](int x) { return x == v.front(); }) ? std::to_string(v.front())
                                                                                 : join_ints(v);
}

}  // namespace detail

inline std::string csv_row(const ResultRow& r) {
  std::string s = std::to_string(r.run_id) + "," + r.solver + "," + std::to_string(r.cfg.num_devices) + "," +
                  std::to_string(r.cfg.total_feature_dim()) + "," + detail::device_list(r.cfg.tx_antennas) + "," +
                  std::to_string(r.cfg.rx_antennas) + "," + std::to_string(r.cfg.slots) + "," +
                  detail::num(r.snr_db, 6) + "," + detail::num(r.power_dbm, 6) + "," + std::to_string(r.layers) +
                  "," + std::to_string(r.sublayers) + "," + std::to_string(r.seed) + "," +
                  detail::num(r.stats.objective_mean) + "," + detail::num(r.stats.mean) + "," +
                  detail::num(r.stats.std_error) + ",";
  s += r.wall_ms < 0.0 ? "NA" : detail::num(r.wall_ms, 6);
  return s;
}

inline void write_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_row(r) << '\n';
}

/// Hash git would give the bytes as a blob: sha1("blob <size>\0" + bytes).
inline std::string git_blob_hash(const std::string& bytes) {
  boost::uuids::detail::sha1 h;
  const std::string head = "blob " + std::to_string(bytes.size()) + '\0';
  h.process_bytes(head.data(), head.size());
  h.process_bytes(bytes.data(), bytes.size());
  unsigned int digest[5];
  h.get_digest(digest);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", digest[i]);
  return std::string(buf, 40);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot read '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::string file_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

/// Documentation of every setting, for the manifest.
inline json settings_doc() {
  json j = json::object();
  for (const auto& s : settings_schema()) j[s.section][s.key] = s.doc;
  return j;
}

}  // namespace taskcomm
