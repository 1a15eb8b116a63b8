#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrate/data_model.hpp"
#include "mrate/estimators.hpp"
#include "mrate/learners.hpp"

namespace mrate {

// Nonlinear: paired bank functions on a random 30% of each block's columns.
// Linear: every column of the block enters linearly (logistic PS, linear Y).
enum class Dgp { Nonlinear, Linear };

std::string_view dgp_name(Dgp d) noexcept;
Dgp parse_dgp(std::string_view name);

// Covariates are four equal blocks W = [X_c | X_iv | X_y | X_irr].
struct SimulationScenario {
  std::size_t n = 750;
  std::size_t p = 32;
  double rho_corr = 0.5;
  double r1 = 0.0;  // confounder / outcome coefficients ~ Unif(r1, r2)
  double r2 = 0.25;
  double r3 = 0.0;  // instrument coefficients ~ Unif(r3, r4)
  double r4 = 0.25;
  double beta_true = 1.0;
  double noise_sd = 1.0;
  double selection_fraction = 0.3;
  double min_group_fraction = 0.25;
  std::size_t max_regen_attempts = 100;
  std::size_t reps = 100;
  std::uint64_t seed = 0;
  Dgp dgp = Dgp::Nonlinear;

  // Throws InvalidScenario.
  void validate() const;
  std::size_t block_width() const noexcept { return p / 4; }
};

enum Block : std::size_t { kConfounder = 0, kInstrument = 1, kOutcomeOnly = 2, kIrrelevant = 3 };

// Column indices of one block inside W.
std::vector<std::size_t> block_columns(const SimulationScenario& sc, Block b);

// Six variants: exp(x1 x2 / 2), x1 / (1 + e^x2), (x1 x2 / 10 + 2)^3,
// (x1 + x2 + 3)^2, and the two step-function products g(x1) h(x2).
inline constexpr int kBankSize = 6;
double bank_function(int variant, double x1, double x2);

// One additive path such as f_a(X_c) gamma_c.
struct PathDesign {
  Block block = kConfounder;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // column indices into W
  std::vector<int> functions;                              // bank variant per pair
  Vector coefficients;                                     // one per pair, or per column when linear
  std::vector<std::size_t> columns;                        // linear paths only
};

// The structural part of the DGP. Drawn once per scenario seed and shared by
// every replication, so replications differ only in data.
struct SimulationDesign {
  PathDesign treatment_confounder;  // f_a on X_c
  PathDesign treatment_instrument;  // g_a on X_iv
  PathDesign outcome_confounder;    // f_y on X_c
  PathDesign outcome_predictor;     // g_y on X_y
};

SimulationDesign draw_design(const SimulationScenario& sc);

struct SimulatedData {
  CausalDataset data;
  OracleTruth truth;
  std::size_t attempts = 1;
};

// Throws ImbalanceExhausted after max_regen_attempts unbalanced draws.
SimulatedData generate_dataset(const SimulationScenario& sc, const SimulationDesign& design, std::size_t rep);
SimulatedData generate_dataset(const SimulationScenario& sc, std::size_t rep);

// ---------------------------------------------------------------------------
// Prediction pools

enum class PoolMode { NoOracle, WithOraclePS, WithOracleOutcome, WithBothOracles, OracleOnly };

std::string_view pool_mode_name(PoolMode m) noexcept;
PoolMode parse_pool_mode(std::string_view name);

// pool_size specs for replication `rep`: the grid is shuffled from the stream
// (seed, rep) and cycled; each pick gets its own derived seed.
std::vector<LearnerSpec> draw_pool_specs(std::span<const LearnerSpec> grid, std::size_t pool_size,
                                         std::uint64_t seed, std::size_t rep);

// Learner columns (ps where present, outcome pairs where present) followed by
// the oracle columns the mode asks for. OracleOnly ignores `learners`.
PredictionBundle pool_builder(const SimulatedData& sim, std::span<const LearnerOutput> learners, PoolMode mode,
                              std::span<const std::string> labels = {});

// ---------------------------------------------------------------------------
// Monte Carlo

enum class ArmKind { MR, DifferenceInMeans, IPW, NIPW, AIPW, NAIPW, GeneralEE };
enum class DrSelection { First, KFold };

std::string_view arm_kind_name(ArmKind k) noexcept;
ArmKind parse_arm_kind(std::string_view name);

struct ArmConfig {
  std::string name;
  ArmKind kind = ArmKind::MR;
  PoolMode pool = PoolMode::NoOracle;  // MR / GeneralEE pool; DR arms use OracleOnly for the truth
  DrSelection selection = DrSelection::First;
  SelectionCriterion criterion = SelectionCriterion::Geo;
  std::size_t folds = 5;
  EstimatorConfig estimator;
};

struct MonteCarloConfig {
  std::vector<LearnerSpec> grid;
  std::size_t pool_size = 0;
  std::vector<ArmConfig> arms;
  unsigned threads = 1;
};

struct ReplicationRecord {
  std::size_t rep = 0;
  std::string arm;
  bool failed = false;
  std::string error;
  double beta_hat = 0.0;
  double se = 0.0;
  bool covered = false;
};

struct ArmSummary {
  std::string name;
  std::size_t successes = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double bias = 0.0;
  double mc_sd = 0.0;  // 1/R denominator, so rmse^2 = bias^2 + mc_sd^2
  double rmse = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
};

struct SimulationReport {
  SimulationScenario scenario;
  std::vector<ArmSummary> arms;
  std::vector<ReplicationRecord> replications;  // rep-major, arms in config order

  const ArmSummary& arm(std::string_view name) const;
};

// Throws InvalidScenario on bad configs and AllReplicationsFailed when an arm
// never succeeds.
SimulationReport run_monte_carlo(const SimulationScenario& sc, const MonteCarloConfig& cfg);

// Aggregates one arm's records against beta_true.
ArmSummary summarize_arm(std::string name, std::span<const ReplicationRecord> records, double beta_true);

}  // namespace mrate
