#pragma once

#include <cstddef>
#include <vector>

#include "mrate/data_model.hpp"

namespace mrate {

struct SolverOptions {
  double tolerance = 1e-8;        // max-abs of sum_i C_i / (1 + gamma'C_i)
  int max_iterations = 100;
  double feasibility_floor = 1e-10;  // every 1 + gamma'C_i must stay above this
  int max_halvings = 60;
  bool normalized_weights = true;  // false: w_i = 1 / (m (1 + gamma'C_i))
};

// Result of one side of the empirical-likelihood system.
struct SideSolution {
  Vector multipliers;  // gamma (treated) or rho (control), one entry per kept column
  Vector weights;      // one entry per group member, in group row order
  int iterations = 0;
  double residual = 0.0;
  double feasibility_margin = 1.0;   // min_i (1 + gamma'C_i)
  std::vector<double> objective_trace;  // dual objective after each accepted step, starting at 0
};

// Maximizes F(gamma) = sum_i log(1 + gamma'C_i) over the group rows of
// `group_columns` (m x d, one row per group member) by damped Newton with
// feasibility step-halving. Throws NonConvergence or SingularSystem.
SideSolution solve_side(const Matrix& group_columns, const SolverOptions& options = {});

// Calibration weights for both arms. u is zero on control rows and v is zero
// on treated rows; both have length n.
struct ELCalibration {
  Vector gamma;
  Vector rho;
  Vector u;
  Vector v;
  int iterations_treated = 0;
  int iterations_control = 0;
  double residual_treated = 0.0;
  double residual_control = 0.0;
  double feasibility_margin = 1.0;
  std::size_t dropped_columns = 0;
  bool normalized = true;
};

// Solves the treated side on (c1, a = 1) and the control side on (c0, a = 0).
// Solver errors carry "side": "treated" | "control" in their diagnostics.
ELCalibration calibrate(const CausalDataset& ds, const ConstraintMatrices& cm, const SolverOptions& options = {});

}  // namespace mrate
