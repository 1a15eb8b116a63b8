#include "mrate/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "mrate/error.hpp"

namespace mrate::io {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

double parse_cell(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  if (!j.is_object()) fail(ErrorCode::InvalidInput, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::InvalidInput, "unknown key '" + key + "' in " + std::string(what));
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("bad value for '") + key + "': " + e.what());
  }
}

json number(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

}  // namespace

RawTable parse_csv(std::string_view text) {
  RawTable table;
  std::size_t line_no = 0;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (header) {
      for (auto c : cells) table.columns.emplace_back(c);
      header = false;
      continue;
    }
    if (cells.size() != table.columns.size()) {
      fail(ErrorCode::InvalidInput, "CSV row has the wrong number of cells",
           {{"line", line_no}, {"expected", table.columns.size()}, {"found", cells.size()}});
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(parse_cell(c));
    table.rows.push_back(std::move(row));
  }
  if (header) fail(ErrorCode::InvalidInput, "CSV input is empty");
  return table;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string() + " for reading", {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RawTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

void write_text(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing", {{"path", path.string()}});
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string(), {{"path", path.string()}});
}

PredictionColumns prediction_columns(const RawTable& table) {
  PredictionColumns pc;
  std::map<std::string, std::size_t> q1, q0;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const std::string& name = table.columns[c];
    if (name.rfind("ps_", 0) == 0) {
      pc.ps.push_back(c);
      pc.labels.push_back(name);
    } else if (name.rfind("q1_", 0) == 0) {
      q1[name.substr(3)] = c;
    } else if (name.rfind("q0_", 0) == 0) {
      q0[name.substr(3)] = c;
    } else {
      fail(ErrorCode::InvalidInput, "unexpected prediction column '" + name + "'");
    }
  }
  for (const auto& [suffix, c] : q1) {
    auto it = q0.find(suffix);
    if (it == q0.end()) fail(ErrorCode::DimensionMismatch, "q1_" + suffix + " has no matching q0_" + suffix);
  }
  if (q1.size() != q0.size()) fail(ErrorCode::DimensionMismatch, "q1 and q0 column counts differ");
  // Keep file order for the outcome pairs.
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const std::string& name = table.columns[c];
    if (name.rfind("q1_", 0) == 0) {
      pc.q1.push_back(c);
      pc.q0.push_back(q0.at(name.substr(3)));
      pc.labels.push_back("q_" + name.substr(3));
    }
  }
  return pc;
}

std::vector<bool> nonfinite_rows(const RawTable& table) {
  std::vector<bool> bad(table.rows.size(), false);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (double v : table.rows[r]) bad[r] = bad[r] || !std::isfinite(v);
  }
  return bad;
}

PredictionBundle bundle_from_table(const RawTable& table, std::span<const std::size_t> rows) {
  const auto pc = prediction_columns(table);
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix ps(n, static_cast<Eigen::Index>(pc.ps.size()));
  Matrix q1(n, static_cast<Eigen::Index>(pc.q1.size()));
  Matrix q0(n, static_cast<Eigen::Index>(pc.q0.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)];
    if (r >= table.rows.size()) fail(ErrorCode::DimensionMismatch, "prediction file has fewer rows than the dataset");
    const auto& row = table.rows[r];
    for (std::size_t k = 0; k < pc.ps.size(); ++k) ps(i, static_cast<Eigen::Index>(k)) = row[pc.ps[k]];
    for (std::size_t l = 0; l < pc.q1.size(); ++l) {
      q1(i, static_cast<Eigen::Index>(l)) = row[pc.q1[l]];
      q0(i, static_cast<Eigen::Index>(l)) = row[pc.q0[l]];
    }
  }
  return PredictionBundle(std::move(ps), std::move(q1), std::move(q0), pc.labels);
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string dataset_csv(const CausalDataset& ds) {
  std::string out = "y,a";
  for (std::size_t j = 1; j <= ds.p(); ++j) out += ",w" + std::to_string(j);
  out += '\n';
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ds.n()); ++i) {
    out += format_double(ds.y()[i]) + ',' + (ds.a()[i] == 1.0 ? "1" : "0");
    for (Eigen::Index j = 0; j < ds.w().cols(); ++j) out += ',' + format_double(ds.w()(i, j));
    out += '\n';
  }
  return out;
}

std::string predictions_csv(const PredictionBundle& pb) {
  std::vector<std::string> head;
  for (std::size_t k = 1; k <= pb.k(); ++k) head.push_back("ps_" + std::to_string(k));
  for (std::size_t l = 1; l <= pb.l(); ++l) head.push_back("q1_" + std::to_string(l));
  for (std::size_t l = 1; l <= pb.l(); ++l) head.push_back("q0_" + std::to_string(l));
  std::string out;
  for (std::size_t c = 0; c < head.size(); ++c) out += (c ? "," : "") + head[c];
  out += '\n';
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(pb.n()); ++i) {
    bool first = true;
    auto put = [&](double v) {
      if (!first) out += ',';
      out += format_double(v);
      first = false;
    };
    for (Eigen::Index k = 0; k < pb.ps().cols(); ++k) put(pb.ps()(i, k));
    for (Eigen::Index l = 0; l < pb.out1().cols(); ++l) put(pb.out1()(i, l));
    for (Eigen::Index l = 0; l < pb.out0().cols(); ++l) put(pb.out0()(i, l));
    out += '\n';
  }
  return out;
}

json to_json(const AteEstimate& est) {
  const auto& d = est.diagnostics;
  return {
      {"method", method_name(est.method)},
      {"beta", number(est.beta)},
      {"beta1", number(est.beta1)},
      {"beta0", number(est.beta0)},
      {"variance", number(est.variance)},
      {"se", number(est.se)},
      {"ci", {number(est.ci_low), number(est.ci_high)}},
      {"diagnostics",
       {{"iterations_treated", d.iterations_treated},
        {"iterations_control", d.iterations_control},
        {"residual_treated", number(d.residual_treated)},
        {"residual_control", number(d.residual_control)},
        {"feasibility_margin", number(d.feasibility_margin)},
        {"dropped_columns", d.dropped_columns}}},
  };
}

json to_json(const EstimatorConfig& cfg) {
  return {{"alpha", cfg.alpha},
          {"eta0", cfg.eta0},
          {"eta1", cfg.eta1},
          {"normalized_weights", cfg.normalized_weights},
          {"ps_clip", cfg.ps_clip},
          {"bootstrap_reps", cfg.bootstrap_reps},
          {"seed", cfg.seed},
          {"threads", cfg.threads}};
}

json to_json(const LearnerSpec& spec) {
  json j = {{"kind", learner_kind_name(spec.kind)}};
  if (spec.kind == LearnerKind::MLP) {
    j["mlp_mode"] = mlp_mode_name(spec.mlp_mode);
    j["hidden_layers"] = spec.hidden_layers;
    j["l1_strength"] = spec.l1_strength;
    j["learning_rate"] = spec.learning_rate;
    j["momentum_beta1"] = spec.momentum_beta1;
    j["epochs"] = spec.epochs;
    j["batch_size"] = spec.batch_size;
  }
  if (spec.kind == LearnerKind::Logistic || spec.kind == LearnerKind::Ridge) j["ridge_lambda"] = spec.ridge_lambda;
  if (!spec.features.empty()) j["features"] = spec.features;
  j["seed"] = spec.seed;
  return j;
}

json to_json(const PredictionMetrics& m) {
  return {{"auc", number(m.auc)}, {"r2", number(m.r2)}, {"d", number(m.d)}, {"geo", number(m.geo)}};
}

json to_json(const SimulationScenario& sc) {
  return {{"n", sc.n},
          {"p", sc.p},
          {"rho_corr", sc.rho_corr},
          {"r1", sc.r1},
          {"r2", sc.r2},
          {"r3", sc.r3},
          {"r4", sc.r4},
          {"beta_true", sc.beta_true},
          {"noise_sd", sc.noise_sd},
          {"selection_fraction", sc.selection_fraction},
          {"min_group_fraction", sc.min_group_fraction},
          {"max_regen_attempts", sc.max_regen_attempts},
          {"reps", sc.reps},
          {"seed", sc.seed},
          {"dgp", dgp_name(sc.dgp)}};
}

json to_json(const ArmConfig& arm) {
  json j = {{"name", arm.name}, {"kind", arm_kind_name(arm.kind)}, {"pool", pool_mode_name(arm.pool)}};
  if (arm.kind != ArmKind::MR && arm.kind != ArmKind::GeneralEE && arm.kind != ArmKind::DifferenceInMeans) {
    j["selection"] = arm.selection == DrSelection::First ? "first" : "kfold";
    if (arm.selection == DrSelection::KFold) {
      j["criterion"] = criterion_name(arm.criterion);
      j["folds"] = arm.folds;
    }
  }
  return j;
}

json to_json(const SimulationReport& report) {
  json arms = json::array();
  for (const auto& a : report.arms) {
    arms.push_back({{"name", a.name},
                    {"successes", a.successes},
                    {"failures", a.failures},
                    {"mean", number(a.mean)},
                    {"bias", number(a.bias)},
                    {"mc_sd", number(a.mc_sd)},
                    {"rmse", number(a.rmse)},
                    {"mean_se", number(a.mean_se)},
                    {"coverage", number(a.coverage)}});
  }
  return {{"scenario", to_json(report.scenario)}, {"estimators", std::move(arms)}};
}

EstimatorConfig estimator_config_from_json(const json& j, EstimatorConfig base) {
  check_keys(j, {"alpha", "eta0", "eta1", "normalized_weights", "ps_clip", "bootstrap_reps", "seed", "threads"},
             "estimator config");
  read_field(j, "alpha", base.alpha);
  read_field(j, "eta0", base.eta0);
  read_field(j, "eta1", base.eta1);
  read_field(j, "normalized_weights", base.normalized_weights);
  read_field(j, "ps_clip", base.ps_clip);
  read_field(j, "bootstrap_reps", base.bootstrap_reps);
  read_field(j, "seed", base.seed);
  read_field(j, "threads", base.threads);
  base.validate();
  return base;
}

LearnerSpec learner_spec_from_json(const json& j) {
  check_keys(j, {"kind", "mlp_mode", "hidden_layers", "l1_strength", "learning_rate", "momentum_beta1", "epochs",
                 "batch_size", "ridge_lambda", "features", "seed"},
             "learner spec");
  LearnerSpec s;
  std::string kind = "mlp";
  std::string mode = "joint";
  read_field(j, "kind", kind);
  read_field(j, "mlp_mode", mode);
  s.kind = parse_learner_kind(kind);
  s.mlp_mode = parse_mlp_mode(mode);
  read_field(j, "hidden_layers", s.hidden_layers);
  read_field(j, "l1_strength", s.l1_strength);
  read_field(j, "learning_rate", s.learning_rate);
  read_field(j, "momentum_beta1", s.momentum_beta1);
  read_field(j, "epochs", s.epochs);
  read_field(j, "batch_size", s.batch_size);
  read_field(j, "ridge_lambda", s.ridge_lambda);
  read_field(j, "features", s.features);
  read_field(j, "seed", s.seed);
  s.validate();
  return s;
}

SimulationScenario scenario_from_json(const json& j, SimulationScenario base) {
  try {
    check_keys(j, {"n", "p", "rho_corr", "r1", "r2", "r3", "r4", "beta_true", "noise_sd", "selection_fraction",
                   "min_group_fraction", "max_regen_attempts", "reps", "seed", "dgp"},
               "scenario");
    read_field(j, "n", base.n);
    read_field(j, "p", base.p);
    read_field(j, "rho_corr", base.rho_corr);
    read_field(j, "r1", base.r1);
    read_field(j, "r2", base.r2);
    read_field(j, "r3", base.r3);
    read_field(j, "r4", base.r4);
    read_field(j, "beta_true", base.beta_true);
    read_field(j, "noise_sd", base.noise_sd);
    read_field(j, "selection_fraction", base.selection_fraction);
    read_field(j, "min_group_fraction", base.min_group_fraction);
    read_field(j, "max_regen_attempts", base.max_regen_attempts);
    read_field(j, "reps", base.reps);
    read_field(j, "seed", base.seed);
    std::string dgp(dgp_name(base.dgp));
    read_field(j, "dgp", dgp);
    base.dgp = parse_dgp(dgp);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidInput) fail(ErrorCode::InvalidScenario, e.what(), e.diagnostics());
    throw;
  }
  base.validate();
  return base;
}

ArmConfig arm_from_json(const json& j, const EstimatorConfig& defaults) {
  check_keys(j, {"name", "kind", "pool", "selection", "criterion", "folds", "estimator"}, "estimator arm");
  ArmConfig arm;
  std::string kind = "mr";
  std::string pool = "no_oracle";
  std::string selection = "first";
  std::string criterion = "geo";
  read_field(j, "kind", kind);
  read_field(j, "pool", pool);
  read_field(j, "selection", selection);
  read_field(j, "criterion", criterion);
  read_field(j, "folds", arm.folds);
  arm.kind = parse_arm_kind(kind);
  arm.pool = parse_pool_mode(pool);
  if (selection == "first") {
    arm.selection = DrSelection::First;
  } else if (selection == "kfold") {
    arm.selection = DrSelection::KFold;
  } else {
    fail(ErrorCode::InvalidInput, "unknown selection rule: " + selection);
  }
  arm.criterion = parse_criterion(criterion);
  arm.name = std::string(arm_kind_name(arm.kind)) + ":" + std::string(pool_mode_name(arm.pool));
  read_field(j, "name", arm.name);
  arm.estimator = j.contains("estimator") ? estimator_config_from_json(j.at("estimator"), defaults) : defaults;
  return arm;
}

std::string replications_csv(const SimulationReport& report) {
  std::string out = "rep,estimator,beta_hat,se,covered\n";
  for (const auto& r : report.replications) {
    out += std::to_string(r.rep) + ',' + r.arm + ',';
    if (r.failed) {
      out += "nan,nan,0\n";
    } else {
      out += format_double(r.beta_hat) + ',' + format_double(r.se) + ',' + (r.covered ? "1" : "0") + '\n';
    }
  }
  return out;
}

}  // namespace mrate::io
