#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrate/data_model.hpp"

namespace mrate {

enum class LearnerKind { Logistic, Ridge, MLP, Oracle };
enum class MlpMode { Joint, Disjoint };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::MLP;
  MlpMode mlp_mode = MlpMode::Joint;
  std::vector<std::size_t> hidden_layers{8};
  double l1_strength = 0.0;
  double learning_rate = 0.01;
  double momentum_beta1 = 0.95;
  std::size_t epochs = 200;
  std::size_t batch_size = 0;  // 0 means 3 * p
  double ridge_lambda = 0.0;   // L2 penalty for Ridge and Logistic
  std::vector<std::size_t> features;  // covariate subset; empty means all
  std::uint64_t seed = 0;

  // Throws InvalidInput on zero widths, epochs or an explicit zero-free batch size.
  void validate() const;
  std::string label() const;
};

std::string_view learner_kind_name(LearnerKind k) noexcept;
LearnerKind parse_learner_kind(std::string_view name);
std::string_view mlp_mode_name(MlpMode m) noexcept;
MlpMode parse_mlp_mode(std::string_view name);

// Predictions of one first-step model. Logistic yields only ps, Ridge only
// q1/q0; MLP and Oracle yield all three.
struct LearnerOutput {
  std::optional<Vector> ps;
  std::optional<Vector> q1;
  std::optional<Vector> q0;
};

// True g(W), Q(1, W), Q(0, W) of a simulated dataset, row-aligned.
struct OracleTruth {
  Vector g;
  Vector q1;
  Vector q0;
};

class FittedModel {
 public:
  virtual ~FittedModel() = default;
  virtual LearnerOutput predict(const Matrix& w) const = 0;
};

inline constexpr double kPsFloor = 1e-6;

// Throws SingularDesign, OracleUnavailable (for Oracle specs) or InvalidInput.
std::unique_ptr<FittedModel> fit_model(const LearnerSpec& spec, const CausalDataset& ds);

// In-sample predictions. Oracle specs need `oracle`.
LearnerOutput fit_predict(const LearnerSpec& spec, const CausalDataset& ds, const OracleTruth* oracle = nullptr);

// ---------------------------------------------------------------------------
// Prediction metrics

struct PredictionMetrics {
  double auc = 0.5;
  double r2 = 0.0;
  double d = 0.0;    // Somers' D = 2 (auc - 0.5)
  double geo = 0.0;  // cbrt(r2 * d * (1 - d)), 0 when the radicand is not positive
};

// Rank statistic with ties counted half. Throws OneClassOnly.
double auc(std::span<const double> scores, std::span<const double> labels);
// 1 - SSE/SST. Throws InvalidInput with fewer than 2 targets or constant targets.
double r_squared(std::span<const double> predictions, std::span<const double> targets);
double geo_metric(double r2, double d);
PredictionMetrics metrics_from(double auc_value, double r2_value);
PredictionMetrics compute_metrics(std::span<const double> scores, std::span<const double> labels,
                                  std::span<const double> predictions, std::span<const double> targets);

// ---------------------------------------------------------------------------
// K-fold model selection

enum class SelectionCriterion { R2, AUC, Geo };
std::string_view criterion_name(SelectionCriterion c) noexcept;
SelectionCriterion parse_criterion(std::string_view name);

struct SpecEvaluation {
  bool failed = false;
  std::string error;
  std::vector<PredictionMetrics> per_fold;  // NaN auc / r2 where the spec lacks that head
  PredictionMetrics mean;                   // from fold-averaged auc and r2
  double score = 0.0;                       // criterion value; -inf when unavailable
  LearnerOutput out_of_fold;                // length-n vectors assembled from held-out folds
};

struct SelectionResult {
  std::size_t best = 0;
  std::vector<std::size_t> fold_of_row;
  std::vector<SpecEvaluation> specs;
};

double criterion_value(const PredictionMetrics& m, SelectionCriterion c);

// Folds come from one seeded shuffle of the row indices; ties go to the
// earliest spec. Throws InvalidInput if every spec fails.
SelectionResult kfold_select(const std::vector<LearnerSpec>& specs, const CausalDataset& ds, std::size_t folds,
                             SelectionCriterion criterion, std::uint64_t seed);

}  // namespace mrate
