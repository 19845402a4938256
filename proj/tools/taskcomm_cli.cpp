// taskcomm: experiment runner.
//
//   taskcomm [run options]                 full pipeline over the sweep grid
//   taskcomm sweep [run options]           same as the bare command
//   taskcomm pretrain-features             -> OUT/gm.json
//   taskcomm pretrain-precoder             OUT/gm.json -> OUT/net.json
//   taskcomm finetune                      OUT/gm.json, OUT/net.json -> OUT/net_finetuned.json
//   taskcomm evaluate                      OUT/gm.json [+ net] -> OUT/results.csv
//   taskcomm selftest                      quick invariant checks
//
// Each stage also writes <artifact>.manifest.json; evaluate and full runs write manifest.json.
//
// Exit codes: 0 ok, 1 selftest failure or internal error, 2 config error,
// 3 numeric failure, 4 missing artifact.

#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "taskcomm/taskcomm.hpp"

namespace fs = std::filesystem;
using namespace taskcomm;

namespace {

struct Options {
  std::string config;
  std::optional<long long> seed;
  std::string out = "taskcomm_out";
  std::optional<int> threads;
  std::string solver;
  std::string gm_path;
  std::string net_path;
};

void add_run_options(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "INI config file (defaults when omitted)");
  app->add_option("--seed", o.seed, "master seed, overrides run.seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--threads", o.threads, "worker threads, overrides run.threads (env TASKCOMM_THREADS)");
  app->add_option("--solver", o.solver, "bca | bca-mm | du-bca | du-bca-mm, overrides solver.name");
}

json resolve_settings(const Options& o) {
  json s = load_settings(o.config);
  if (o.seed) set_setting(s, "run", "seed", std::to_string(*o.seed));
  if (o.threads) set_setting(s, "run", "threads", std::to_string(*o.threads));
  if (!o.solver.empty()) set_setting(s, "solver", "name", o.solver);
  validate_settings(s);
  return s;
}

int thread_count(const json& s) { return resolve_threads(s["run"]["threads"].get<int>()); }

std::string out_file(const Options& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

/// Reads an artifact or explains which stage produces it.
json load_artifact(const std::string& path, const std::string& producer, const Options& o) {
  if (!fs::exists(path)) {
    std::string hint = "taskcomm " + producer;
    if (!o.config.empty()) hint += " --config " + o.config;
    hint += " --out " + o.out;
    throw MissingArtifact("missing artifact '" + path + "'. Create it with `" + hint + "` or pass its path explicitly.");
  }
  return read_json(path);
}

/// Single training point of the staged commands: the first sweep point.
SweepPoint staged_point(const json& s) {
  const auto points = sweep_points(s);
  if (s["sweep"]["slots"].size() > 1)
    throw ConfigError("staged commands train one network; give at most one sweep.slots value");
  return points.front();
}

json manifest_base(const std::string& command, const json& s) {
  json m;
  m["kind"] = "run_manifest";
  m["version"] = kArtifactVersion;
  m["command"] = command;
  m["settings"] = s;
  m["settings_doc"] = settings_doc();
  m["threads_used"] = thread_count(s);
  const double pl = pathloss_db(s["channel"]["distance_m"].get<double>());
  m["units"] = {{"pathloss_db", pl},
                {"implied_snr_db", implied_snr_db(s)},
                {"convention", "noise-normalized: unit budgets, unit path gain, sigma^2 = 10^(-snr_db/10)"}};
  json seeds;
  seeds["master"] = s["run"]["seed"];
  seeds["features"] = stream_seed(s, SeedStream::Features);
  seeds["train_channels"] = stream_seed(s, SeedStream::TrainChannels);
  seeds["pretrain"] = stream_seed(s, SeedStream::Pretrain);
  seeds["finetune"] = stream_seed(s, SeedStream::Finetune);
  seeds["evaluate"] = stream_seed(s, SeedStream::Evaluate);
  m["seeds"] = seeds;
  m["artifacts"] = json::object();
  return m;
}

void record_artifact(json& manifest, const Options& o, const std::string& name) {
  manifest["artifacts"][name] = file_hash(out_file(o, name));
}

void write_manifest(const Options& o, const json& manifest, const std::string& name = "manifest.json") {
  write_json(out_file(o, name), manifest);
}

void log_training(const char* what, const TrainingReport& r) {
  std::cerr << what << ": " << r.initial_objective << " -> " << r.final_objective << " after " << r.steps
            << " steps\n";
}

json points_json(const std::vector<SweepPoint>& points) {
  json a = json::array();
  for (std::size_t i = 0; i < points.size(); ++i)
    a.push_back({{"run_id", i}, {"slots", points[i].slots}, {"snr_db", points[i].snr_db},
                 {"sigma", noise_sigma(points[i].snr_db)}});
  return a;
}

int cmd_pretrain_features(const Options& o) {
  const json s = resolve_settings(o);
  fs::create_directories(o.out);
  write_json(out_file(o, "gm.json"), gm_to_json(build_feature_model(s)));
  json m = manifest_base("pretrain-features", s);
  record_artifact(m, o, "gm.json");
  write_manifest(o, m, "gm.manifest.json");
  return 0;
}

int cmd_pretrain_precoder(const Options& o) {
  const json s = resolve_settings(o);
  if (!is_unfolded_solver(s["solver"]["name"].get<std::string>()))
    throw ConfigError("pretrain-precoder needs solver du-bca or du-bca-mm");
  const std::string gm_path = o.gm_path.empty() ? out_file(o, "gm.json") : o.gm_path;
  const GMModel gm = gm_from_json(load_artifact(gm_path, "pretrain-features", o));
  const SweepPoint point = staged_point(s);
  TrainingReport report;
  const UnfoldedNet net = pretrain_precoder(s, gm, point, thread_count(s), &report);
  log_training("pretrain", report);
  fs::create_directories(o.out);
  write_json(out_file(o, "net.json"), net_to_json(net));
  json m = manifest_base("pretrain-precoder", s);
  m["inputs"] = {{"gm", file_hash(gm_path)}};
  m["points"] = points_json({point});
  m["training"] = {{"initial_objective", report.initial_objective}, {"final_objective", report.final_objective}};
  record_artifact(m, o, "net.json");
  write_manifest(o, m, "net.manifest.json");
  return 0;
}

int cmd_finetune(const Options& o) {
  const json s = resolve_settings(o);
  const std::string gm_path = o.gm_path.empty() ? out_file(o, "gm.json") : o.gm_path;
  const std::string net_path = o.net_path.empty() ? out_file(o, "net.json") : o.net_path;
  const GMModel gm = gm_from_json(load_artifact(gm_path, "pretrain-features", o));
  const UnfoldedNet net = net_from_json(load_artifact(net_path, "pretrain-precoder", o));
  const SweepPoint point = staged_point(s);
  TrainingReport report;
  const UnfoldedNet tuned = finetune_precoder(s, net, gm, point, thread_count(s), &report);
  log_training("finetune", report);
  fs::create_directories(o.out);
  write_json(out_file(o, "net_finetuned.json"), net_to_json(tuned));
  json m = manifest_base("finetune", s);
  m["inputs"] = {{"gm", file_hash(gm_path)}, {"net", file_hash(net_path)}};
  m["points"] = points_json({point});
  m["training"] = {{"initial_loss", report.initial_objective}, {"final_loss", report.final_objective}};
  record_artifact(m, o, "net_finetuned.json");
  write_manifest(o, m, "net_finetuned.manifest.json");
  return 0;
}

int cmd_evaluate(const Options& o) {
  const json s = resolve_settings(o);
  const std::string gm_path = o.gm_path.empty() ? out_file(o, "gm.json") : o.gm_path;
  const GMModel gm = gm_from_json(load_artifact(gm_path, "pretrain-features", o));
  json m = manifest_base("evaluate", s);
  m["inputs"] = {{"gm", file_hash(gm_path)}};
  std::optional<UnfoldedNet> net;
  if (is_unfolded_solver(s["solver"]["name"].get<std::string>())) {
    std::string net_path = o.net_path;
    if (net_path.empty())
      net_path = fs::exists(out_file(o, "net_finetuned.json")) ? out_file(o, "net_finetuned.json")
                                                                : out_file(o, "net.json");
    net = net_from_json(load_artifact(net_path, "pretrain-precoder", o));
    m["inputs"]["net"] = file_hash(net_path);
    m["inputs"]["net_path"] = fs::path(net_path).filename().string();
  }
  const auto points = sweep_points(s);
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i)
    rows.push_back(evaluate_point(s, gm, points[i], net ? &*net : nullptr, static_cast<int>(i), thread_count(s)));
  fs::create_directories(o.out);
  write_csv(out_file(o, "results.csv"), rows);
  m["points"] = points_json(points);
  record_artifact(m, o, "results.csv");
  write_manifest(o, m);
  return 0;
}

/// Every stage in one process; unfolded solvers get one network per sweep point.
int cmd_sweep(const Options& o, const std::string& command) {
  const json s = resolve_settings(o);
  const int threads = thread_count(s);
  fs::create_directories(o.out);
  json m = manifest_base(command, s);
  const GMModel gm = build_feature_model(s);
  write_json(out_file(o, "gm.json"), gm_to_json(gm));
  record_artifact(m, o, "gm.json");
  const bool unfolded = is_unfolded_solver(s["solver"]["name"].get<std::string>());
  const auto points = sweep_points(s);
  std::vector<ResultRow> rows;
  json training = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::optional<UnfoldedNet> net;
    if (unfolded) {
      TrainingReport pre, fine;
      net = pretrain_precoder(s, gm, points[i], threads, &pre);
      net = finetune_precoder(s, *net, gm, points[i], threads, &fine);
      log_training("pretrain", pre);
      log_training("finetune", fine);
      const std::string name = "net_" + std::to_string(i) + ".json";
      write_json(out_file(o, name), net_to_json(*net));
      record_artifact(m, o, name);
      training.push_back({{"run_id", i},
                          {"pretrain_objective", {pre.initial_objective, pre.final_objective}},
                          {"finetune_loss", {fine.initial_objective, fine.final_objective}}});
    }
    rows.push_back(evaluate_point(s, gm, points[i], net ? &*net : nullptr, static_cast<int>(i), threads));
    std::cerr << csv_row(rows.back()) << '\n';
  }
  write_csv(out_file(o, "results.csv"), rows);
  m["points"] = points_json(points);
  if (unfolded) m["training"] = training;
  record_artifact(m, o, "results.csv");
  write_manifest(o, m);
  return 0;
}

// ---- selftest ----

struct Probe {
  SystemConfig cfg;
  GMModel gm;
  ChannelState ch;
};

Probe random_probe(std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, 77));
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int devices = pick(1, 3), dk = pick(devices == 1 ? 2 : 1, 2);
  Probe p;
  p.cfg = SystemConfig::uniform(devices, pick(2, 3), dk, pick(1, 3), pick(1, 4), 1, 1.0);
  p.gm = make_gm_model(p.cfg, pick(1, devices * dk - 1), derive_seed(seed, 1));
  RicianParams r;
  r.pathloss_db = 0.0;
  p.ch = sample_channel(r, p.cfg, noise_sigma(std::uniform_real_distribution<double>(-5, 20)(rng)),
                        derive_seed(seed, 2));
  return p;
}

bool check_majorizer() {
  Rng rng = make_rng(1);
  for (int t = 0; t < 300; ++t) {
    const int n = 1 + t % 6;
    Qcqp q;
    q.n = random_hpd(n, rng, 0.0);
    q.b = complex_normal_matrix(n, 1, rng);
    const double eta = eta_bound(q.n);
    const CVector a = complex_normal_matrix(n, 1, rng), v = complex_normal_matrix(n, 1, rng);
    const double scale = 1.0 + std::abs(qcqp_objective(q, v)) + std::abs(qcqp_objective(q, a));
    if (mm_surrogate(q, eta, v, a) < qcqp_objective(q, v) - 1e-10 * scale) return false;
    if (std::abs(mm_surrogate(q, eta, a, a) - qcqp_objective(q, a)) > 1e-10 * scale) return false;
  }
  return true;
}

bool check_bisection() {
  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + t % 5;
    const CMatrix nmat = random_hpd(n, rng, 0.0);
    const CVector b = complex_normal_matrix(n, 1, rng);
    const double power = 0.1 + 2.0 * u(rng);
    const QcqpSolution s = v_step_bisection(b, nmat, power);
    if (s.v.squaredNorm() > power) return false;
    if (s.lambda * (power - s.v.squaredNorm()) > 1e-8 * power * std::max(1.0, s.lambda)) return false;
    Qcqp q{b, nmat};
    const double best = qcqp_objective(q, s.v);
    for (int r = 0; r < 1000; ++r) {
      CVector x = complex_normal_matrix(n, 1, rng);
      x *= std::sqrt(power * u(rng)) / x.norm();
      if (qcqp_objective(q, x) < best - 1e-9 * (1.0 + std::abs(best))) return false;
    }
  }
  return true;
}

bool check_bca_monotone() {
  for (int t = 0; t < 20; ++t) {
    const Probe p = random_probe(t);
    const PrecodingContext ctx(p.cfg, p.ch, p.gm, 1e-6);
    BcaOptions o;
    o.max_iters = 30;
    o.tol = 0.0;
    const auto tr = bca_solve(ctx, channel_init(p.cfg, p.gm, p.ch), o).objective_trace;
    for (std::size_t i = 1; i < tr.size(); ++i)
      if (tr[i] < tr[i - 1] - 1e-9 * std::abs(tr[i - 1])) return false;
  }
  return true;
}

bool check_unfolded_feasible() {
  for (int t = 0; t < 40; ++t) {
    const Probe p = random_probe(100 + t);
    const PrecodingContext ctx(p.cfg, p.ch, p.gm, 1e-6);
    const PrecoderSet v0 = channel_init(p.cfg, p.gm, p.ch);
    const auto variant = t % 2 ? UnfoldedVariant::DuBca : UnfoldedVariant::DuBcaMm;
    UnfoldedNet net = anchored_net(variant, ctx, v0, 2, 2);
    RVector x = flatten(net);
    Rng rng = make_rng(t);
    std::normal_distribution<double> g;
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += 0.1 * g(rng) * (std::abs(x(i)) + 1e-3);
    unflatten(net, x);
    PrecoderSet out;
    try {
      out = du_forward(net, ctx, v0);
    } catch (const ZeroDiagonal&) {
      continue;
    }
    for (int k = 0; k < p.cfg.num_devices; ++k)
      if (out.power(k, ctx.sigma_block(k, k)) > out.budgets[k] + 1e-9) return false;
  }
  return true;
}

bool check_posteriors() {
  for (int t = 0; t < 20; ++t) {
    const Probe p = random_probe(200 + t);
    const PrecoderSet v = channel_init(p.cfg, p.gm, p.ch);
    const MapClassifier clf(v, p.ch, p.gm);
    Rng rng = make_rng(t);
    for (int r = 0; r < 20; ++r) {
      const CVector y = complex_normal_matrix(p.ch.rx_dim(), 1, rng) * (1.0 + r);
      // rounding of log-sum-exp grows with the log-joint magnitude
      const double scale = 1.0 + clf.log_joint(y).cwiseAbs().maxCoeff();
      const double tol = 8.0 * clf.num_classes() * std::numeric_limits<double>::epsilon() * scale;
      if (std::abs(clf.log_posteriors(y).array().exp().sum() - 1.0) > tol) return false;
    }
  }
  return true;
}

bool check_e2e_uniform() {
  const SystemConfig cfg = SystemConfig::uniform(2, 3, 2, 2, 3, 1, 1.0);
  const GMModel base = make_gm_model(cfg, 2, 5);
  const GMModel same = GMModel::from_components({1.0 / 3, 1.0 / 3, 1.0 / 3},
                                                {base.class_covs[0], base.class_covs[0], base.class_covs[0]});
  RicianParams r;
  r.pathloss_db = 0.0;
  const std::vector<ChannelState> chs{sample_channel(r, cfg, 0.5, 1), sample_channel(r, cfg, 0.5, 2)};
  std::vector<std::vector<PrecoderSet>> v;
  for (const auto& ch : chs) v.push_back({channel_init(cfg, same, ch)});
  const double loss = e2e_loss(sample_features(same, 50, false, 3), v, chs, {0.5}, same, 4);
  return std::abs(loss - std::log(3.0)) < 1e-10;
}

bool check_spsa() {
  SpsaOptions o;
  o.steps = 5000;
  o.c = 0.1;
  o.initial_step = 0.5;
  const RVector target = (RVector(3) << 1.0, -2.0, 0.5).finished();
  const auto r = spsa_minimize(
      [&](const RVector& x, std::uint64_t) { return (x - target).squaredNorm(); },
      RVector::Zero(3), o, 11);
  return (r.x - target).norm() < 1e-3;
}

bool check_roundtrip() {
  const Probe p = random_probe(300);
  const PrecodingContext ctx(p.cfg, p.ch, p.gm, 1e-6);
  for (auto variant : {UnfoldedVariant::DuBca, UnfoldedVariant::DuBcaMm}) {
    const UnfoldedNet net = anchored_net(variant, ctx, channel_init(p.cfg, p.gm, p.ch), 2, 2);
    if (flatten(net_from_json(json::parse(net_to_json(net).dump()))) != flatten(net)) return false;
  }
  const GMModel back = gm_from_json(json::parse(gm_to_json(p.gm).dump()));
  return back.global_cov == p.gm.global_cov;
}

int cmd_selftest() {
  const std::vector<std::pair<const char*, bool (*)()>> checks = {
      {"majorizer bound holds and is tight at the anchor", check_majorizer},
      {"bisection V-step is KKT-feasible and beats random points", check_bisection},
      {"bca objective trace is non-decreasing", check_bca_monotone},
      {"unfolded output respects the power budgets", check_unfolded_feasible},
      {"class posteriors sum to one", check_posteriors},
      {"end-to-end loss is ln J for identical classes", check_e2e_uniform},
      {"spsa reaches the optimum of a quadratic", check_spsa},
      {"artifacts survive a JSON round trip", check_roundtrip},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      std::cout << "  error: " << e.what() << '\n';
    }
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
    failed += ok ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " check(s) failed" : "all checks passed") << '\n';
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented MIMO precoding experiments"};
  app.require_subcommand(0, 1);
  Options o;
  add_run_options(&app, o);

  auto* features = app.add_subcommand("pretrain-features", "build the feature statistics");
  auto* pretrain = app.add_subcommand("pretrain-precoder", "initialize and pretrain an unfolded precoder");
  auto* finetune = app.add_subcommand("finetune", "end-to-end fine-tuning of a pretrained precoder");
  auto* evaluate = app.add_subcommand("evaluate", "Monte-Carlo accuracy of a solver");
  auto* sweep = app.add_subcommand("sweep", "full pipeline over the sweep grid");
  auto* selftest = app.add_subcommand("selftest", "run the invariant checks");
  for (auto* sub : {features, pretrain, finetune, evaluate, sweep}) add_run_options(sub, o);
  for (auto* sub : {pretrain, finetune, evaluate})
    sub->add_option("--gm", o.gm_path, "feature statistics artifact (default OUT/gm.json)");
  for (auto* sub : {finetune, evaluate})
    sub->add_option("--net", o.net_path, "network artifact (default OUT/net_finetuned.json, then OUT/net.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*features) return cmd_pretrain_features(o);
    if (*pretrain) return cmd_pretrain_precoder(o);
    if (*finetune) return cmd_finetune(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*selftest) return cmd_selftest();
    return cmd_sweep(o, *sweep ? "sweep" : "run");
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: malformed artifact: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
