#include "mrate/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "mrate/data_model.hpp"
#include "mrate/el_solver.hpp"
#include "mrate/estimators.hpp"
#include "mrate/io.hpp"
#include "mrate/learners.hpp"
#include "mrate/simulation.hpp"

namespace mrate::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kSchemaVersion = "1.0";

struct CommonOptions {
  std::string config;
  std::string out;
  std::string format = "json";
  std::uint64_t seed = 0;
  bool seed_given = false;
  unsigned threads = 1;
};

struct EstimateOptions {
  std::string data;
  std::string predictions;
  std::string estimators;
  std::string export_predictions;
  bool bootstrap = false;
  bool no_pool = false;
};

struct SimulateOptions {
  std::string scenario;
};

struct MetricsOptions {
  std::string scores;
  std::string outcomes;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Method method_from_cli(const std::string& name) {
  for (auto m : {Method::MR, Method::IPW, Method::NIPW, Method::AIPW, Method::NAIPW, Method::GeneralEE}) {
    if (lower(name) == lower(std::string(method_name(m)))) return m;
  }
  if (lower(name) == "general_ee") return Method::GeneralEE;
  fail(ErrorCode::Usage, "unknown estimator '" + name + "'");
}

json load_json(const std::string& path) {
  const std::string text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidInput, "malformed JSON in " + path + ": " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& what) {
  if (!j.is_object()) fail(ErrorCode::InvalidInput, what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorCode::InvalidInput, "unknown key '" + key + "' in " + what);
    }
  }
}

void emit(const CommonOptions& common, const std::string& content, std::ostream& out) {
  if (common.out.empty()) {
    out << content;
  } else {
    io::write_text(common.out, content);
  }
}

json config_echo(const EstimatorConfig& cfg) {
  json j = io::to_json(cfg);
  j.erase("threads");  // reports must not depend on the worker count
  return j;
}

// ---------------------------------------------------------------------------

int cmd_estimate(const CommonOptions& common, const EstimateOptions& opt, std::ostream& out) {
  if (common.format != "json" && common.format != "csv") fail(ErrorCode::Usage, "--format must be json or csv");

  json config = json::object();
  if (!common.config.empty()) config = load_json(common.config);
  check_keys(config, {"estimator", "learners", "estimators", "bootstrap"}, "run config");

  EstimatorConfig cfg;
  if (config.contains("estimator")) cfg = io::estimator_config_from_json(config.at("estimator"));
  if (common.seed_given) cfg.seed = common.seed;
  cfg.threads = common.threads;
  cfg.validate();

  std::vector<LearnerSpec> learners;
  if (config.contains("learners")) {
    if (!config.at("learners").is_array()) fail(ErrorCode::InvalidInput, "'learners' must be an array");
    for (const auto& s : config.at("learners")) learners.push_back(io::learner_spec_from_json(s));
  }

  std::vector<std::string> names;
  if (!opt.estimators.empty()) {
    names = split_list(opt.estimators);
  } else if (config.contains("estimators")) {
    names = config.at("estimators").get<std::vector<std::string>>();
  } else {
    names = {"MR"};
  }
  std::vector<Method> methods;
  for (const auto& n : names) methods.push_back(method_from_cli(n));
  const bool bootstrap = opt.bootstrap || config.value("bootstrap", false);

  if (opt.predictions.empty() && learners.empty() && !opt.no_pool) {
    fail(ErrorCode::Usage, "no prediction pool: pass --predictions, learner specs in --config, or --no-pool");
  }
  if (opt.no_pool && (!opt.predictions.empty() || !learners.empty())) {
    fail(ErrorCode::Usage, "--no-pool cannot be combined with predictions or learners");
  }

  RawTable raw = io::read_csv(opt.data);
  std::optional<RawTable> pred_table;
  if (!opt.predictions.empty()) {
    pred_table = io::read_csv(opt.predictions);
    if (pred_table->rows.size() != raw.rows.size()) {
      fail(ErrorCode::DimensionMismatch, "prediction file and dataset have different row counts",
           {{"dataset_rows", raw.rows.size()}, {"prediction_rows", pred_table->rows.size()}});
    }
    // A row is dropped from both files if either holds a missing value.
    const auto bad = io::nonfinite_rows(*pred_table);
    const auto iy = raw.column_index("y");
    if (iy >= 0) {
      for (std::size_t r = 0; r < bad.size(); ++r) {
        if (bad[r]) raw.rows[r][static_cast<std::size_t>(iy)] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  const CausalDataset ds = validate_dataset(raw);

  PredictionBundle pb = PredictionBundle::empty(ds.n());
  if (pred_table) pb = io::bundle_from_table(*pred_table, ds.source_rows());
  for (const auto& spec : learners) {
    const auto fitted = fit_predict(spec, ds);
    if (fitted.ps) pb = pb.with_ps(*fitted.ps, spec.label());
    if (fitted.q1) pb = pb.with_outcome(*fitted.q1, *fitted.q0, spec.label());
  }
  if (!opt.export_predictions.empty()) io::write_text(opt.export_predictions, io::predictions_csv(pb));

  const auto cm = build_constraint_matrices(ds, pb);
  std::optional<ELCalibration> cal;
  auto calibration = [&]() -> const ELCalibration& {
    if (!cal) cal = calibrate(ds, cm, cfg.solver_options());
    return *cal;
  };
  std::optional<DoublyRobustEstimates> dr;
  // IPW and nIPW ignore the outcome columns, so a pool without any gets zeros.
  auto doubly_robust = [&](bool needs_outcome) -> const DoublyRobustEstimates& {
    if (pb.k() == 0) fail(ErrorCode::InvalidInput, "IPW-family estimators need a propensity column");
    if (needs_outcome && pb.l() == 0) fail(ErrorCode::InvalidInput, "AIPW and nAIPW need an outcome column pair");
    if (!dr) {
      const Vector zero = Vector::Zero(static_cast<Eigen::Index>(ds.n()));
      dr = pb.l() > 0 ? dr_estimates(ds, pb.ps().col(0), pb.out1().col(0), pb.out0().col(0), cfg)
                      : dr_estimates(ds, pb.ps().col(0), zero, zero, cfg);
    }
    return *dr;
  };

  std::vector<AteEstimate> estimates;
  for (auto m : methods) {
    switch (m) {
      case Method::MR: estimates.push_back(mr_estimate(ds, calibration(), cfg)); break;
      case Method::GeneralEE: estimates.push_back(general_ee_estimate(ds, calibration(), cfg)); break;
      case Method::IPW: estimates.push_back(doubly_robust(false).ipw); break;
      case Method::NIPW: estimates.push_back(doubly_robust(false).nipw); break;
      case Method::AIPW: estimates.push_back(doubly_robust(true).aipw); break;
      case Method::NAIPW: estimates.push_back(doubly_robust(true).naipw); break;
    }
  }
  std::optional<BootstrapResult> boot;
  if (bootstrap) boot = bootstrap_se(ds, pb, cfg);

  if (common.format == "csv") {
    std::string csv = "method,beta,beta1,beta0,se,ci_low,ci_high\n";
    for (const auto& e : estimates) {
      csv += std::string(method_name(e.method)) + ',' + io::format_double(e.beta) + ',' + io::format_double(e.beta1) +
             ',' + io::format_double(e.beta0) + ',' + io::format_double(e.se) + ',' + io::format_double(e.ci_low) +
             ',' + io::format_double(e.ci_high) + '\n';
    }
    emit(common, csv, out);
    return 0;
  }

  json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "estimate";
  report["data"] = {{"n", ds.n()}, {"n1", ds.n1()}, {"n0", ds.n0()}, {"p", ds.p()}, {"dropped_rows", ds.dropped_rows()}};
  report["pool"] = {{"k", pb.k()},
                    {"l", pb.l()},
                    {"labels", pb.labels()},
                    {"dropped_treated", {{"duplicates", cm.treated.duplicates}, {"degenerate", cm.treated.degenerate}}},
                    {"dropped_control", {{"duplicates", cm.control.duplicates}, {"degenerate", cm.control.degenerate}}}};
  json ests = json::array();
  for (const auto& e : estimates) ests.push_back(io::to_json(e));
  report["estimates"] = std::move(ests);
  if (boot) {
    report["bootstrap"] = {{"se", boot->se}, {"replicates", boot->replicates}, {"failures", boot->failures}};
  }
  json learner_echo = json::array();
  for (const auto& s : learners) learner_echo.push_back(io::to_json(s));
  std::vector<std::string> method_names;
  for (auto m : methods) method_names.emplace_back(method_name(m));
  report["config"] = {{"estimator", config_echo(cfg)},
                      {"estimators", method_names},
                      {"learners", std::move(learner_echo)},
                      {"bootstrap", bootstrap},
                      {"data", opt.data},
                      {"predictions", opt.predictions.empty() ? json(nullptr) : json(opt.predictions)}};
  emit(common, report.dump(2) + '\n', out);
  return 0;
}

// ---------------------------------------------------------------------------

std::string series_csv(const std::vector<SimulationReport>& runs) {
  std::string csv = "estimator,n,bias,sd,rmse,mean_se,coverage\n";
  for (const auto& r : runs) {
    for (const auto& a : r.arms) {
      csv += a.name + ',' + std::to_string(r.scenario.n) + ',' + io::format_double(a.bias) + ',' +
             io::format_double(a.mc_sd) + ',' + io::format_double(a.rmse) + ',' + io::format_double(a.mean_se) + ',' +
             io::format_double(a.coverage) + '\n';
    }
  }
  return csv;
}

std::string summary_csv(const std::vector<SimulationReport>& runs) {
  std::string csv = "estimator,n,successes,failures,mean,bias,mc_sd,rmse,mean_se,coverage\n";
  for (const auto& r : runs) {
    for (const auto& a : r.arms) {
      csv += a.name + ',' + std::to_string(r.scenario.n) + ',' + std::to_string(a.successes) + ',' +
             std::to_string(a.failures) + ',' + io::format_double(a.mean) + ',' + io::format_double(a.bias) + ',' +
             io::format_double(a.mc_sd) + ',' + io::format_double(a.rmse) + ',' + io::format_double(a.mean_se) + ',' +
             io::format_double(a.coverage) + '\n';
    }
  }
  return csv;
}

int cmd_simulate(const CommonOptions& common, const SimulateOptions& opt, std::ostream& out) {
  if (common.format != "json" && common.format != "csv") fail(ErrorCode::Usage, "--format must be json or csv");

  EstimatorConfig defaults;
  if (!common.config.empty()) {
    const json config = load_json(common.config);
    check_keys(config, {"estimator"}, "run config");
    if (config.contains("estimator")) defaults = io::estimator_config_from_json(config.at("estimator"));
  }

  const json file = load_json(opt.scenario);
  try {
    check_keys(file, {"scenario", "grid", "pool_size", "arms", "n_values", "estimator"}, "scenario file");
  } catch (const Error& e) {
    fail(ErrorCode::InvalidScenario, e.what());
  }
  if (!file.contains("scenario")) fail(ErrorCode::InvalidScenario, "scenario file needs a 'scenario' object");
  SimulationScenario sc = io::scenario_from_json(file.at("scenario"));
  if (common.seed_given) sc.seed = common.seed;
  if (file.contains("estimator")) defaults = io::estimator_config_from_json(file.at("estimator"), defaults);

  MonteCarloConfig mc;
  mc.threads = common.threads;
  if (file.contains("grid")) {
    for (const auto& s : file.at("grid")) mc.grid.push_back(io::learner_spec_from_json(s));
  }
  mc.pool_size = file.value("pool_size", mc.grid.empty() ? std::size_t{0} : mc.grid.size());
  if (file.contains("arms")) {
    for (const auto& a : file.at("arms")) mc.arms.push_back(io::arm_from_json(a, defaults));
  } else {
    ArmConfig mr;
    mr.name = "mr";
    mr.pool = mc.grid.empty() ? PoolMode::OracleOnly : PoolMode::NoOracle;
    mr.estimator = defaults;
    mc.arms.push_back(mr);
  }

  std::vector<std::size_t> n_values{sc.n};
  if (file.contains("n_values")) n_values = file.at("n_values").get<std::vector<std::size_t>>();
  if (n_values.empty()) fail(ErrorCode::InvalidScenario, "n_values must not be empty");

  std::vector<SimulationReport> runs;
  for (auto n : n_values) {
    SimulationScenario run = sc;
    run.n = n;
    runs.push_back(run_monte_carlo(run, mc));
  }

  if (!common.out.empty()) {
    const fs::path base(common.out);
    const fs::path dir = base.parent_path();
    const std::string stem = base.stem().string();
    if (runs.size() == 1) {
      io::write_text(dir / (stem + "_replications.csv"), io::replications_csv(runs.front()));
    } else {
      for (const auto& r : runs) {
        io::write_text(dir / (stem + "_replications_n" + std::to_string(r.scenario.n) + ".csv"), io::replications_csv(r));
      }
    }
    io::write_text(dir / (stem + "_series.csv"), series_csv(runs));
  }

  if (common.format == "csv") {
    emit(common, summary_csv(runs), out);
    return 0;
  }
  json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "simulate";
  json run_list = json::array();
  for (const auto& r : runs) run_list.push_back(io::to_json(r));
  report["runs"] = std::move(run_list);
  json grid = json::array();
  for (const auto& s : mc.grid) grid.push_back(io::to_json(s));
  json arms = json::array();
  for (const auto& a : mc.arms) {
    json j = io::to_json(a);
    j["estimator"] = config_echo(a.estimator);
    arms.push_back(std::move(j));
  }
  report["config"] = {{"scenario", io::to_json(sc)},
                      {"n_values", n_values},
                      {"grid", std::move(grid)},
                      {"pool_size", mc.pool_size},
                      {"arms", std::move(arms)}};
  emit(common, report.dump(2) + '\n', out);
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<double> column_of(const RawTable& t, const std::string& name, const std::string& path) {
  const auto c = t.column_index(name);
  if (c < 0) fail(ErrorCode::InvalidInput, path + " needs a '" + name + "' column");
  std::vector<double> v;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double x = t.rows[r][static_cast<std::size_t>(c)];
    if (!std::isfinite(x)) fail(ErrorCode::NonFinite, "non-finite value in " + path, {{"row", r}, {"column", name}});
    v.push_back(x);
  }
  return v;
}

int cmd_metrics(const CommonOptions& common, const MetricsOptions& opt, std::ostream& out) {
  if (common.format != "json" && common.format != "csv") fail(ErrorCode::Usage, "--format must be json or csv");
  if (opt.scores.empty() && opt.outcomes.empty()) fail(ErrorCode::Usage, "pass --scores and/or --outcomes");

  std::optional<double> auc_value, r2_value;
  if (!opt.scores.empty()) {
    const auto t = io::read_csv(opt.scores);
    auc_value = auc(column_of(t, "score", opt.scores), column_of(t, "label", opt.scores));
  }
  if (!opt.outcomes.empty()) {
    const auto t = io::read_csv(opt.outcomes);
    r2_value = r_squared(column_of(t, "prediction", opt.outcomes), column_of(t, "target", opt.outcomes));
  }

  json m;
  m["schema_version"] = kSchemaVersion;
  m["command"] = "metrics";
  m["auc"] = auc_value ? json(*auc_value) : json(nullptr);
  m["d"] = auc_value ? json(2.0 * (*auc_value - 0.5)) : json(nullptr);
  m["r2"] = r2_value ? json(*r2_value) : json(nullptr);
  m["geo"] = auc_value && r2_value ? json(metrics_from(*auc_value, *r2_value).geo) : json(nullptr);
  m["config"] = {{"scores", opt.scores.empty() ? json(nullptr) : json(opt.scores)},
                 {"outcomes", opt.outcomes.empty() ? json(nullptr) : json(opt.outcomes)}};

  if (common.format == "csv") {
    auto cell = [&](const char* key) { return m[key].is_null() ? std::string() : io::format_double(m[key].get<double>()); };
    emit(common, "auc,d,r2,geo\n" + cell("auc") + ',' + cell("d") + ',' + cell("r2") + ',' + cell("geo") + '\n', out);
    return 0;
  }
  emit(common, m.dump(2) + '\n', out);
  return 0;
}

const char* kExitCodes =
    "Exit codes:\n"
    "  0 success            1 internal error      2 usage\n"
    "  3 invalid input      4 file I/O\n"
    "  10 empty group       11 non-binary treatment\n"
    "  12 non-finite data   13 dimension mismatch\n"
    "  20 solver did not converge   21 singular system\n"
    "  22 degenerate propensity     23 too many bootstrap failures\n"
    "  30 singular design   31 oracle unavailable   32 one class only\n"
    "  40 imbalance exhausted   41 all replications failed   42 invalid scenario\n";

void write_error(std::ostream& err, ErrorCode code, const std::string& message, const json& diagnostics) {
  json j = {{"error", error_name(code)}, {"code", exit_code(code)}, {"message", message}, {"diagnostics", diagnostics}};
  err << j.dump() << '\n';
}

}  // namespace

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Usage: return 2;
    case ErrorCode::InvalidInput: return 3;
    case ErrorCode::Io: return 4;
    case ErrorCode::EmptyGroup: return 10;
    case ErrorCode::NonBinaryTreatment: return 11;
    case ErrorCode::NonFinite: return 12;
    case ErrorCode::DimensionMismatch: return 13;
    case ErrorCode::NonConvergence: return 20;
    case ErrorCode::SingularSystem: return 21;
    case ErrorCode::DegeneratePS: return 22;
    case ErrorCode::TooManyFailures: return 23;
    case ErrorCode::SingularDesign: return 30;
    case ErrorCode::OracleUnavailable: return 31;
    case ErrorCode::OneClassOnly: return 32;
    case ErrorCode::ImbalanceExhausted: return 40;
    case ErrorCode::AllReplicationsFailed: return 41;
    case ErrorCode::InvalidScenario: return 42;
  }
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiply robust average treatment effect estimation", "mrate"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  CommonOptions common;
  EstimateOptions est;
  SimulateOptions sim;
  MetricsOptions met;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Seed for every random stream");
    sub->add_option("--threads", common.threads, "Worker cap (results do not depend on it)")->check(CLI::Range(1u, 1024u));
    sub->add_option("--out", common.out, "Output file (default: stdout)");
    sub->add_option("--format", common.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  };

  auto* estimate = app.add_subcommand("estimate", "Estimate the ATE from a dataset and a prediction pool");
  add_common(estimate);
  estimate->add_option("--data", est.data, "Dataset CSV (y, a, covariates)")->required()->check(CLI::ExistingFile);
  estimate->add_option("--predictions", est.predictions, "Prediction CSV (ps_*, q1_*, q0_*)")->check(CLI::ExistingFile);
  estimate->add_option("--estimators", est.estimators, "Comma list of MR, GeneralEE, IPW, nIPW, AIPW, nAIPW");
  estimate->add_option("--export-predictions", est.export_predictions, "Write the assembled pool as a prediction CSV");
  estimate->add_flag("--bootstrap", est.bootstrap, "Add the bootstrap SE of MR");
  estimate->add_flag("--no-pool", est.no_pool, "Use an empty pool (difference of means)");

  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo study");
  add_common(simulate);
  simulate->add_option("--scenario", sim.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);

  auto* metrics = app.add_subcommand("metrics", "AUC, R2, Somers' D and geo of supplied predictions");
  add_common(metrics);
  metrics->add_option("--scores", met.scores, "CSV with score,label columns")->check(CLI::ExistingFile);
  metrics->add_option("--outcomes", met.outcomes, "CSV with prediction,target columns")->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    write_error(err, ErrorCode::Usage, e.what(), json::object());
    return exit_code(ErrorCode::Usage);
  }
  for (auto* sub : {estimate, simulate, metrics}) {
    if (sub->parsed() && sub->count("--seed") > 0) common.seed_given = true;
  }

  try {
    if (estimate->parsed()) return cmd_estimate(common, est, out);
    if (simulate->parsed()) return cmd_simulate(common, sim, out);
    return cmd_metrics(common, met, out);
  } catch (const Error& e) {
    write_error(err, e.code(), e.what(), e.diagnostics());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << json{{"error", "Internal"}, {"code", 1}, {"message", e.what()}, {"diagnostics", json::object()}}.dump() << '\n';
    return 1;
  }
}

}  // namespace mrate::cli
