#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrate/data_model.hpp"
#include "mrate/estimators.hpp"
#include "mrate/learners.hpp"
#include "mrate/simulation.hpp"

namespace mrate::io {

using nlohmann::json;

// Comma-separated, header row first. Blank or unparseable cells read as NaN.
// Throws InvalidInput on ragged rows.
RawTable parse_csv(std::string_view text);
// Throws Io when the file cannot be read.
RawTable read_csv(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view content);

// Column layout ps_1..ps_K, q1_1..q1_L, q0_1..q0_L; q1_j pairs with q0_j.
struct PredictionColumns {
  std::vector<std::size_t> ps;
  std::vector<std::size_t> q1;
  std::vector<std::size_t> q0;
  std::vector<std::string> labels;
};
PredictionColumns prediction_columns(const RawTable& table);

// Rows of `table` that hold a non-finite prediction.
std::vector<bool> nonfinite_rows(const RawTable& table);

// Predictions for the listed source rows.
PredictionBundle bundle_from_table(const RawTable& table, std::span<const std::size_t> rows);

std::string dataset_csv(const CausalDataset& ds);
std::string predictions_csv(const PredictionBundle& pb);

// Shortest round-trip decimal form.
std::string format_double(double x);

json to_json(const AteEstimate& est);
json to_json(const EstimatorConfig& cfg);
json to_json(const LearnerSpec& spec);
json to_json(const PredictionMetrics& m);
json to_json(const SimulationScenario& sc);
json to_json(const ArmConfig& arm);
json to_json(const SimulationReport& report);

// Fields missing from `j` keep the values in `base`. Unknown keys are rejected.
EstimatorConfig estimator_config_from_json(const json& j, EstimatorConfig base = {});
LearnerSpec learner_spec_from_json(const json& j);
SimulationScenario scenario_from_json(const json& j, SimulationScenario base = {});
ArmConfig arm_from_json(const json& j, const EstimatorConfig& defaults);

// rep,estimator,beta_hat,se,covered
std::string replications_csv(const SimulationReport& report);

}  // namespace mrate::io
