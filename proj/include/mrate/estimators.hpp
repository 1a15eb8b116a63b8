#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrate/data_model.hpp"
#include "mrate/el_solver.hpp"

namespace mrate {

struct EstimatorConfig {
  double alpha = 0.05;
  double eta0 = 0.0;
  double eta1 = 0.0;
  bool normalized_weights = true;
  double ps_clip = 0.01;
  std::size_t bootstrap_reps = 500;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  // Throws InvalidInput when alpha or ps_clip is out of range.
  void validate() const;
  SolverOptions solver_options() const;
};

// Two-sided standard normal quantile z_{1 - alpha/2}.
double normal_quantile_two_sided(double alpha);

// beta1 = sum a u y, beta0 = sum (1 - a) v y, with variance and CI attached.
AteEstimate mr_estimate(const CausalDataset& ds, const ELCalibration& cal, const EstimatorConfig& cfg = {});

// sum_i [a u^2 (y - beta1)^2 + (1 - a) v^2 (y - beta0)^2]
double mr_variance(const CausalDataset& ds, const ELCalibration& cal, double beta1, double beta0);

// Root of the eta-indexed estimating-equation family; eta0 = eta1 = 0 is MR.
AteEstimate general_ee_estimate(const CausalDataset& ds, const ELCalibration& cal, const EstimatorConfig& cfg = {});

struct DoublyRobustEstimates {
  AteEstimate ipw;
  AteEstimate nipw;
  AteEstimate aipw;
  AteEstimate naipw;
};

// IPW / nIPW / AIPW / nAIPW for a single (g, Q(1), Q(0)) triple. g is clipped
// to [ps_clip, 1 - ps_clip] first.
DoublyRobustEstimates dr_estimates(const CausalDataset& ds, const Vector& g, const Vector& q1, const Vector& q0,
                                   const EstimatorConfig& cfg = {});

// Convenience: constraint matrices, calibration and mr_estimate in one call.
AteEstimate estimate_mr(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg = {});

struct BootstrapResult {
  double se = 0.0;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  std::vector<double> estimates;  // successful replicate betas, in replicate order
};

// One bootstrap replicate drawn from stream (cfg.seed, stream). Returns false
// when the resample loses a group or its calibration fails.
bool bootstrap_replicate(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg,
                         std::uint64_t stream, double& beta);

// Runs the replicates named by `streams`; throws TooManyFailures above 20%.
BootstrapResult bootstrap_streams(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg,
                                  std::span<const std::uint64_t> streams);

// Nonparametric bootstrap SE of MR with streams 0 .. bootstrap_reps - 1.
BootstrapResult bootstrap_se(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg);

// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> x);

}  // namespace mrate
