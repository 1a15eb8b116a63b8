#include "mrate/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mrate/el_solver.hpp"
#include "mrate/error.hpp"
#include "mrate/parallel.hpp"

namespace mrate {

namespace {

constexpr std::uint64_t kDesignTag = 0xDE51;
constexpr std::uint64_t kDataTag = std::uint64_t{1} << 40;
constexpr std::uint64_t kPoolTag = std::uint64_t{2} << 40;
constexpr std::uint64_t kFoldTag = std::uint64_t{3} << 40;

double unit_uniform(std::mt19937_64& rng) { return std::generate_canonical<double, 53>(rng); }

double draw_coefficient(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double indicator(bool b) { return b ? 1.0 : 0.0; }

PathDesign draw_path(const SimulationScenario& sc, Block block, double lo, double hi, std::mt19937_64& rng) {
  PathDesign path;
  path.block = block;
  auto cols = block_columns(sc, block);
  if (sc.dgp == Dgp::Linear) {
    path.columns = cols;
    path.coefficients.resize(static_cast<Eigen::Index>(cols.size()));
    for (auto& c : path.coefficients) c = draw_coefficient(rng, lo, hi);
    return path;
  }
  std::shuffle(cols.begin(), cols.end(), rng);
  const auto width = static_cast<double>(cols.size());
  const auto k = std::min(cols.size(), static_cast<std::size_t>(std::ceil(sc.selection_fraction * width - 1e-9)));
  cols.resize(std::max<std::size_t>(k, 1));
  for (std::size_t i = 0; i < cols.size(); i += 2) {
    path.pairs.emplace_back(cols[i], i + 1 < cols.size() ? cols[i + 1] : cols[0]);
  }
  path.coefficients.resize(static_cast<Eigen::Index>(path.pairs.size()));
  for (std::size_t j = 0; j < path.pairs.size(); ++j) {
    path.functions.push_back(static_cast<int>(rng() % kBankSize));
    path.coefficients[static_cast<Eigen::Index>(j)] = draw_coefficient(rng, lo, hi);
  }
  return path;
}

// Standardized bank features (nonlinear) or raw columns (linear) times coefficients.
Vector evaluate_path(const PathDesign& path, const Matrix& w) {
  const Eigen::Index n = w.rows();
  Vector out = Vector::Zero(n);
  if (!path.columns.empty()) {
    for (std::size_t j = 0; j < path.columns.size(); ++j) {
      out += path.coefficients[static_cast<Eigen::Index>(j)] * w.col(static_cast<Eigen::Index>(path.columns[j]));
    }
    return out;
  }
  Vector f(n);
  for (std::size_t j = 0; j < path.pairs.size(); ++j) {
    const auto c1 = static_cast<Eigen::Index>(path.pairs[j].first);
    const auto c2 = static_cast<Eigen::Index>(path.pairs[j].second);
    for (Eigen::Index i = 0; i < n; ++i) f[i] = bank_function(path.functions[j], w(i, c1), w(i, c2));
    const double mean = f.mean();
    const double sd = std::sqrt((f.array() - mean).square().mean());
    if (sd < 1e-12) continue;
    out += path.coefficients[static_cast<Eigen::Index>(j)] * ((f.array() - mean) / sd).matrix();
  }
  return out;
}

void record_estimate(ReplicationRecord& rec, const AteEstimate& est, double beta_true) {
  rec.beta_hat = est.beta;
  rec.se = est.se;
  rec.covered = est.ci_low <= beta_true && beta_true <= est.ci_high;
}

bool arm_uses_learners(const ArmConfig& arm) {
  switch (arm.kind) {
    case ArmKind::DifferenceInMeans: return false;
    case ArmKind::MR:
    case ArmKind::GeneralEE: return arm.pool != PoolMode::OracleOnly;
    default: return arm.pool != PoolMode::WithBothOracles && arm.pool != PoolMode::OracleOnly;
  }
}

struct DrInputs {
  Vector g;
  Vector q1;
  Vector q0;
};

DrInputs dr_inputs(const ArmConfig& arm, const SimulatedData& sim, std::span<const LearnerSpec> specs,
                   std::span<const LearnerOutput> outputs, std::uint64_t fold_seed) {
  const bool oracle_ps = arm.pool == PoolMode::WithOraclePS || arm.pool == PoolMode::WithBothOracles ||
                         arm.pool == PoolMode::OracleOnly;
  const bool oracle_q = arm.pool == PoolMode::WithOracleOutcome || arm.pool == PoolMode::WithBothOracles ||
                        arm.pool == PoolMode::OracleOnly;
  std::optional<Vector> g, q1, q0;
  if (oracle_ps) g = sim.truth.g;
  if (oracle_q) {
    q1 = sim.truth.q1;
    q0 = sim.truth.q0;
  }
  if ((!g || !q1) && arm.selection == DrSelection::KFold) {
    const auto sel = kfold_select(std::vector<LearnerSpec>(specs.begin(), specs.end()), sim.data, arm.folds,
                                  arm.criterion, fold_seed);
    const auto& best = outputs[sel.best];
    if (!g && best.ps) g = best.ps;
    if (!q1 && best.q1) {
      q1 = best.q1;
      q0 = best.q0;
    }
  }
  for (const auto& out : outputs) {
    if (!g && out.ps) g = out.ps;
    if (!q1 && out.q1) {
      q1 = out.q1;
      q0 = out.q0;
    }
  }
  if (!g || !q1) fail(ErrorCode::InvalidInput, "arm " + arm.name + " needs a propensity and an outcome model");
  return {std::move(*g), std::move(*q1), std::move(*q0)};
}

}  // namespace

std::string_view dgp_name(Dgp d) noexcept { return d == Dgp::Linear ? "linear" : "nonlinear"; }

Dgp parse_dgp(std::string_view name) {
  if (name == "nonlinear") return Dgp::Nonlinear;
  if (name == "linear") return Dgp::Linear;
  fail(ErrorCode::InvalidScenario, "unknown dgp: " + std::string(name));
}

void SimulationScenario::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidScenario, msg); };
  if (p == 0 || p % 4 != 0) bad("p must be a positive multiple of 4");
  if (n < 4) bad("n must be at least 4");
  if (!(rho_corr > -1.0 && rho_corr < 1.0)) bad("rho_corr must be in (-1, 1)");
  if (!(min_group_fraction > 0.0 && min_group_fraction < 0.5)) bad("min_group_fraction must be in (0, 0.5)");
  if (!(selection_fraction > 0.0 && selection_fraction <= 1.0)) bad("selection_fraction must be in (0, 1]");
  if (!(r1 <= r2) || !(r3 <= r4)) bad("coefficient ranges must satisfy r1 <= r2 and r3 <= r4");
  for (double v : {r1, r2, r3, r4, beta_true}) {
    if (!std::isfinite(v)) bad("coefficient ranges and beta_true must be finite");
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) bad("noise_sd must be a nonnegative finite value");
  if (max_regen_attempts == 0) bad("max_regen_attempts must be >= 1");
}

std::vector<std::size_t> block_columns(const SimulationScenario& sc, Block b) {
  const std::size_t w = sc.block_width();
  std::vector<std::size_t> cols(w);
  std::iota(cols.begin(), cols.end(), static_cast<std::size_t>(b) * w);
  return cols;
}

double bank_function(int variant, double x1, double x2) {
  switch (variant) {
    case 0: return std::exp(x1 * x2 / 2.0);
    case 1: return x1 / (1.0 + std::exp(x2));
    case 2: {
      const double t = x1 * x2 / 10.0 + 2.0;
      return t * t * t;
    }
    case 3: return (x1 + x2 + 3.0) * (x1 + x2 + 3.0);
    case 4: {
      // Indicator sums as written; overlapping boundaries add up.
      const double g = -2.0 * indicator(x1 <= -1.0) - indicator(x1 >= -1.0 && x1 <= 0.0) +
                       indicator(x1 >= 0.0 && x1 <= 2.0) + 3.0 * indicator(x1 >= 2.0);
      const double h = -5.0 * indicator(x2 <= 0.0) - 2.0 * indicator(x2 >= 0.0 && x2 <= 1.0) + 3.0 * indicator(x2 >= 1.0);
      return g * h;
    }
    case 5: return indicator(x1 >= 0.0) * indicator(x2 >= 1.0);
    default: fail(ErrorCode::InvalidInput, "bank variant out of range", {{"variant", variant}});
  }
}

SimulationDesign draw_design(const SimulationScenario& sc) {
  sc.validate();
  auto rng = make_stream(sc.seed, kDesignTag);
  SimulationDesign d;
  d.treatment_confounder = draw_path(sc, kConfounder, sc.r1, sc.r2, rng);
  d.treatment_instrument = draw_path(sc, kInstrument, sc.r3, sc.r4, rng);
  d.outcome_confounder = draw_path(sc, kConfounder, sc.r1, sc.r2, rng);
  d.outcome_predictor = draw_path(sc, kOutcomeOnly, sc.r1, sc.r2, rng);
  return d;
}

SimulatedData generate_dataset(const SimulationScenario& sc, const SimulationDesign& design, std::size_t rep) {
  sc.validate();
  const auto n = static_cast<Eigen::Index>(sc.n);
  const auto bw = static_cast<Eigen::Index>(sc.block_width());

  Matrix sigma(bw, bw);
  for (Eigen::Index j = 0; j < bw; ++j) {
    for (Eigen::Index k = 0; k < bw; ++k) sigma(j, k) = std::pow(sc.rho_corr, static_cast<double>(std::abs(j - k)));
  }
  const Matrix chol = sigma.llt().matrixL();

  std::size_t worst_minority = sc.n;
  for (std::size_t attempt = 0; attempt < sc.max_regen_attempts; ++attempt) {
    auto rng = make_stream(sc.seed, kDataTag + rep, attempt);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix w(n, static_cast<Eigen::Index>(sc.p));
    Vector z(bw);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index b = 0; b < 4; ++b) {
        for (Eigen::Index j = 0; j < bw; ++j) z[j] = normal(rng);
        w.row(i).segment(b * bw, bw) = (chol * z).transpose();
      }
    }

    const Vector eta = evaluate_path(design.treatment_confounder, w) + evaluate_path(design.treatment_instrument, w);
    const Vector mu = evaluate_path(design.outcome_confounder, w) + evaluate_path(design.outcome_predictor, w);

    Vector g(n), a(n), y(n);
    std::size_t treated = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      g[i] = sigmoid(eta[i]);
      a[i] = unit_uniform(rng) < g[i] ? 1.0 : 0.0;
      treated += a[i] == 1.0;
    }
    const std::size_t minority = std::min(treated, sc.n - treated);
    worst_minority = std::min(worst_minority, minority);
    if (static_cast<double>(minority) < sc.min_group_fraction * static_cast<double>(sc.n)) continue;

    for (Eigen::Index i = 0; i < n; ++i) y[i] = 3.0 + sc.beta_true * a[i] + mu[i] + sc.noise_sd * normal(rng);

    OracleTruth truth;
    truth.g = g;
    truth.q0 = mu.array() + 3.0;
    truth.q1 = mu.array() + 3.0 + sc.beta_true;
    return SimulatedData{CausalDataset(std::move(y), std::move(a), std::move(w)), std::move(truth), attempt + 1};
  }
  fail(ErrorCode::ImbalanceExhausted, "every generated dataset had an undersized treatment group",
       {{"attempts", sc.max_regen_attempts}, {"rep", rep}, {"smallest_group", worst_minority}});
}

SimulatedData generate_dataset(const SimulationScenario& sc, std::size_t rep) {
  return generate_dataset(sc, draw_design(sc), rep);
}

std::string_view pool_mode_name(PoolMode m) noexcept {
  switch (m) {
    case PoolMode::NoOracle: return "no_oracle";
    case PoolMode::WithOraclePS: return "with_oracle_ps";
    case PoolMode::WithOracleOutcome: return "with_oracle_outcome";
    case PoolMode::WithBothOracles: return "with_both_oracles";
    case PoolMode::OracleOnly: return "oracle_only";
  }
  return "unknown";
}

PoolMode parse_pool_mode(std::string_view name) {
  for (auto m : {PoolMode::NoOracle, PoolMode::WithOraclePS, PoolMode::WithOracleOutcome, PoolMode::WithBothOracles,
                 PoolMode::OracleOnly}) {
    if (name == pool_mode_name(m)) return m;
  }
  fail(ErrorCode::InvalidInput, "unknown pool mode: " + std::string(name));
}

std::vector<LearnerSpec> draw_pool_specs(std::span<const LearnerSpec> grid, std::size_t pool_size,
                                         std::uint64_t seed, std::size_t rep) {
  std::vector<LearnerSpec> out;
  if (pool_size == 0) return out;
  if (grid.empty()) fail(ErrorCode::InvalidInput, "a learner pool needs a non-empty spec grid");
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, kPoolTag + rep);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < pool_size; ++k) {
    LearnerSpec spec = grid[order[k % grid.size()]];
    spec.seed = make_stream(seed, kPoolTag + rep, k + 1)();
    out.push_back(std::move(spec));
  }
  return out;
}

PredictionBundle pool_builder(const SimulatedData& sim, std::span<const LearnerOutput> learners, PoolMode mode,
                              std::span<const std::string> labels) {
  PredictionBundle pb = PredictionBundle::empty(sim.data.n());
  if (mode != PoolMode::OracleOnly) {
    for (std::size_t k = 0; k < learners.size(); ++k) {
      const std::string label = k < labels.size() ? labels[k] : "learner_" + std::to_string(k);
      if (learners[k].ps) pb = pb.with_ps(*learners[k].ps, label);
      if (learners[k].q1) pb = pb.with_outcome(*learners[k].q1, *learners[k].q0, label);
    }
  }
  const bool oracle_ps = mode == PoolMode::WithOraclePS || mode == PoolMode::WithBothOracles || mode == PoolMode::OracleOnly;
  const bool oracle_q = mode == PoolMode::WithOracleOutcome || mode == PoolMode::WithBothOracles || mode == PoolMode::OracleOnly;
  if (oracle_ps) pb = pb.with_ps(sim.truth.g.cwiseMax(kPsFloor).cwiseMin(1.0 - kPsFloor), "oracle");
  if (oracle_q) pb = pb.with_outcome(sim.truth.q1, sim.truth.q0, "oracle");
  return pb;
}

std::string_view arm_kind_name(ArmKind k) noexcept {
  switch (k) {
    case ArmKind::MR: return "mr";
    case ArmKind::DifferenceInMeans: return "difference_in_means";
    case ArmKind::IPW: return "ipw";
    case ArmKind::NIPW: return "nipw";
    case ArmKind::AIPW: return "aipw";
    case ArmKind::NAIPW: return "naipw";
    case ArmKind::GeneralEE: return "general_ee";
  }
  return "unknown";
}

ArmKind parse_arm_kind(std::string_view name) {
  for (auto k : {ArmKind::MR, ArmKind::DifferenceInMeans, ArmKind::IPW, ArmKind::NIPW, ArmKind::AIPW, ArmKind::NAIPW,
                 ArmKind::GeneralEE}) {
    if (name == arm_kind_name(k)) return k;
  }
  fail(ErrorCode::InvalidInput, "unknown estimator arm: " + std::string(name));
}

const ArmSummary& SimulationReport::arm(std::string_view name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  fail(ErrorCode::InvalidInput, "no arm named " + std::string(name));
}

ArmSummary summarize_arm(std::string name, std::span<const ReplicationRecord> records, double beta_true) {
  ArmSummary s;
  s.name = std::move(name);
  double sum = 0.0;
  double se_sum = 0.0;
  std::size_t covered = 0;
  for (const auto& r : records) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    ++s.successes;
    sum += r.beta_hat;
    se_sum += r.se;
    covered += r.covered;
  }
  if (s.successes == 0) return s;
  const double count = static_cast<double>(s.successes);
  s.mean = sum / count;
  s.bias = s.mean - beta_true;
  double ss = 0.0;
  double sq_err = 0.0;
  for (const auto& r : records) {
    if (r.failed) continue;
    ss += (r.beta_hat - s.mean) * (r.beta_hat - s.mean);
    sq_err += (r.beta_hat - beta_true) * (r.beta_hat - beta_true);
  }
  s.mc_sd = std::sqrt(ss / count);
  s.rmse = std::sqrt(sq_err / count);
  s.mean_se = se_sum / count;
  s.coverage = static_cast<double>(covered) / count;
  return s;
}

SimulationReport run_monte_carlo(const SimulationScenario& sc, const MonteCarloConfig& cfg) {
  sc.validate();
  if (sc.reps < 2) fail(ErrorCode::InvalidScenario, "reps must be >= 2");
  if (cfg.arms.empty()) fail(ErrorCode::InvalidScenario, "at least one estimator arm is required");
  bool needs_learners = false;
  for (const auto& arm : cfg.arms) {
    arm.estimator.validate();
    needs_learners = needs_learners || arm_uses_learners(arm);
    if (arm.selection == DrSelection::KFold && arm.folds < 2) fail(ErrorCode::InvalidScenario, "folds must be >= 2");
  }
  if (needs_learners && (cfg.pool_size == 0 || cfg.grid.empty())) {
    fail(ErrorCode::InvalidScenario, "learner-based arms need a spec grid and pool_size >= 1");
  }
  for (const auto& spec : cfg.grid) spec.validate();

  const SimulationDesign design = draw_design(sc);
  const std::size_t arms = cfg.arms.size();
  std::vector<ReplicationRecord> records(sc.reps * arms);

  parallel_for(sc.reps, cfg.threads, [&](std::size_t rep) {
    ReplicationRecord* row = &records[rep * arms];
    for (std::size_t k = 0; k < arms; ++k) {
      row[k].rep = rep;
      row[k].arm = cfg.arms[k].name;
    }
    auto fail_all = [&](const std::string& msg, bool learners_only) {
      for (std::size_t k = 0; k < arms; ++k) {
        if (learners_only && !arm_uses_learners(cfg.arms[k])) continue;
        row[k].failed = true;
        row[k].error = msg;
      }
    };

    std::optional<SimulatedData> sim;
    try {
      sim.emplace(generate_dataset(sc, design, rep));
    } catch (const Error& e) {
      fail_all(std::string(error_name(e.code())) + ": " + e.what(), false);
      return;
    }

    std::vector<LearnerSpec> specs;
    std::vector<LearnerOutput> outputs;
    std::vector<std::string> labels;
    if (needs_learners) {
      try {
        specs = draw_pool_specs(cfg.grid, cfg.pool_size, sc.seed, rep);
        for (const auto& spec : specs) {
          outputs.push_back(fit_predict(spec, sim->data, &sim->truth));
          labels.push_back(spec.label());
        }
      } catch (const Error& e) {
        fail_all(std::string(error_name(e.code())) + ": " + e.what(), true);
        outputs.clear();
      }
    }

    for (std::size_t k = 0; k < arms; ++k) {
      const ArmConfig& arm = cfg.arms[k];
      if (row[k].failed) continue;
      try {
        const CausalDataset& ds = sim->data;
        AteEstimate est;
        switch (arm.kind) {
          case ArmKind::DifferenceInMeans:
            est = estimate_mr(ds, PredictionBundle::empty(ds.n()), arm.estimator);
            break;
          case ArmKind::MR:
            est = estimate_mr(ds, pool_builder(*sim, outputs, arm.pool, labels), arm.estimator);
            break;
          case ArmKind::GeneralEE: {
            const auto cm = build_constraint_matrices(ds, pool_builder(*sim, outputs, arm.pool, labels));
            est = general_ee_estimate(ds, calibrate(ds, cm, arm.estimator.solver_options()), arm.estimator);
            break;
          }
          default: {
            const auto in = dr_inputs(arm, *sim, specs, outputs, make_stream(sc.seed, kFoldTag + rep, k)());
            const auto dr = dr_estimates(ds, in.g, in.q1, in.q0, arm.estimator);
            est = arm.kind == ArmKind::IPW    ? dr.ipw
                  : arm.kind == ArmKind::NIPW ? dr.nipw
                  : arm.kind == ArmKind::AIPW ? dr.aipw
                                              : dr.naipw;
          }
        }
        record_estimate(row[k], est, sc.beta_true);
      } catch (const Error& e) {
        row[k].failed = true;
        row[k].error = std::string(error_name(e.code())) + ": " + e.what();
      }
    }
  });

  SimulationReport report;
  report.scenario = sc;
  report.replications = std::move(records);
  for (std::size_t k = 0; k < arms; ++k) {
    std::vector<ReplicationRecord> mine;
    for (std::size_t rep = 0; rep < sc.reps; ++rep) mine.push_back(report.replications[rep * arms + k]);
    report.arms.push_back(summarize_arm(cfg.arms[k].name, mine, sc.beta_true));
    if (report.arms.back().successes == 0) {
      fail(ErrorCode::AllReplicationsFailed, "every replication failed for arm " + cfg.arms[k].name,
           {{"arm", cfg.arms[k].name}, {"first_error", mine.front().error}});
    }
  }
  return report;
}

}  // namespace mrate
