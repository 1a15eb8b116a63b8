#include "mrate/el_solver.hpp"

#include <cmath>
#include <string>

#include "mrate/error.hpp"
#include "mrate/kernels.hpp"

namespace mrate {
namespace {

constexpr double kRankThreshold = 1e-10;

std::span<const double> column(const Matrix& m, Eigen::Index j) {
  return {m.col(j).data(), static_cast<std::size_t>(m.rows())};
}

std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// denom = 1 + C * gamma
void denominators(const Matrix& c, const Vector& gamma, Vector& denom) {
  denom.setOnes();
  for (Eigen::Index k = 0; k < c.cols(); ++k) kernels::axpy(gamma[k], column(c, k), span_of(denom));
}

nlohmann::json solver_state(int iterations, double residual, double margin) {
  return {{"iterations", iterations}, {"residual", residual}, {"feasibility_margin", margin}};
}

}  // namespace

SideSolution solve_side(const Matrix& raw, const SolverOptions& options) {
  const Eigen::Index m = raw.rows();
  const Eigen::Index d = raw.cols();
  if (m == 0) fail(ErrorCode::EmptyGroup, "calibration group is empty");

  // Newton runs on RMS-scaled columns; the weights are unchanged and the
  // multipliers are mapped back at the end.
  Vector scale(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double rms = raw.col(k).norm() / std::sqrt(static_cast<double>(m));
    scale[k] = rms > 0.0 && std::isfinite(rms) ? rms : 1.0;
  }
  const Matrix c = raw * scale.cwiseInverse().asDiagonal();

  SideSolution out;
  out.multipliers = Vector::Zero(d);
  out.objective_trace.push_back(0.0);

  Vector denom(m), recip(m), step_proj(m), ratio(m), trial(m);
  Vector grad(d);
  const auto ms = static_cast<std::size_t>(m);

  double objective = 0.0;
  int iter = 0;
  while (true) {
    denominators(c, out.multipliers, denom);
    kernels::reciprocal(span_of(denom), span_of(recip));
    for (Eigen::Index k = 0; k < d; ++k) grad[k] = kernels::dot(column(c, k), span_of(recip));
    out.residual = d > 0 ? grad.cwiseProduct(scale).cwiseAbs().maxCoeff() : 0.0;
    out.feasibility_margin = kernels::min_value(span_of(denom));
    // Raw gradient and normalized-weight residual must both be small.
    const double weight_total = kernels::sum(span_of(recip));
    if (out.residual <= options.tolerance && out.residual <= options.tolerance * weight_total) break;
    if (iter >= options.max_iterations) {
      fail(ErrorCode::NonConvergence,
           "calibration residual " + std::to_string(out.residual) + " above tolerance after " +
               std::to_string(iter) + " iterations; zero may lie outside the convex hull of the constraint rows",
           solver_state(iter, out.residual, out.feasibility_margin));
    }

    // The Newton step H^{-1} grad, with H = J'J and grad = J'1 for
    // J = diag(1 / denom) C, is the least-squares solution of J s = 1. A
    // rank-revealing QR on J avoids squaring the condition number of a
    // correlated pool. Directions below the rank threshold are exact
    // collinearities up to rounding and get no step.
    const Matrix jac = recip.asDiagonal() * c;
    Eigen::CompleteOrthogonalDecomposition<Matrix> qr;
    qr.setThreshold(kRankThreshold);
    qr.compute(jac);
    const Vector step = qr.solve(Vector::Ones(m));
    if (!step.allFinite()) {
      fail(ErrorCode::SingularSystem, "Newton step is not finite", solver_state(iter, out.residual, out.feasibility_margin));
    }

    step_proj.setZero();
    for (Eigen::Index k = 0; k < d; ++k) kernels::axpy(step[k], column(c, k), span_of(step_proj));
    kernels::multiply(span_of(step_proj), span_of(recip), span_of(ratio));

    // Halve until feasible and F does not decrease. The increment is summed as
    // log1p of relative changes so it stays accurate near the optimum.
    double t = 1.0;
    bool accepted = false;
    double delta = 0.0;
    for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
      trial = denom;
      kernels::axpy(t, span_of(step_proj), span_of(trial));
      if (kernels::min_value(span_of(trial)) < options.feasibility_floor) continue;
      delta = 0.0;
      for (std::size_t i = 0; i < ms; ++i) delta += std::log1p(t * ratio[static_cast<Eigen::Index>(i)]);
      if (delta >= 0.0) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      fail(ErrorCode::NonConvergence, "line search could not find an ascent step",
           solver_state(iter, out.residual, out.feasibility_margin));
    }
    out.multipliers += t * step;
    objective += delta;
    out.objective_trace.push_back(objective);
    ++iter;
  }

  out.iterations = iter;
  out.multipliers = out.multipliers.cwiseQuotient(scale);
  if (options.normalized_weights) {
    out.weights = recip / kernels::sum(span_of(recip));
  } else {
    out.weights = recip / static_cast<double>(m);
  }
  return out;
}

ELCalibration calibrate(const CausalDataset& ds, const ConstraintMatrices& cm, const SolverOptions& options) {
  if (cm.n() != ds.n()) {
    fail(ErrorCode::DimensionMismatch, "constraint matrices have " + std::to_string(cm.n()) + " rows, dataset has " +
                                           std::to_string(ds.n()));
  }
  const auto n = static_cast<Eigen::Index>(ds.n());

  auto run = [&](const Matrix& full, double arm, const char* side) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ds.a()[i] == arm) rows.push_back(i);
    }
    Matrix group(static_cast<Eigen::Index>(rows.size()), full.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) group.row(static_cast<Eigen::Index>(r)) = full.row(rows[r]);
    try {
      SideSolution sol = solve_side(group, options);
      Vector w = Vector::Zero(n);
      for (std::size_t r = 0; r < rows.size(); ++r) w[rows[r]] = sol.weights[static_cast<Eigen::Index>(r)];
      return std::make_pair(std::move(sol), std::move(w));
    } catch (const Error& e) {
      nlohmann::json diag = e.diagnostics();
      diag["side"] = side;
      throw Error(e.code(), std::string(side) + " side: " + e.what(), std::move(diag));
    }
  };

  auto [treated, u] = run(cm.c1(), 1.0, "treated");
  auto [control, v] = run(cm.c0(), 0.0, "control");

  ELCalibration cal;
  cal.gamma = std::move(treated.multipliers);
  cal.rho = std::move(control.multipliers);
  cal.u = std::move(u);
  cal.v = std::move(v);
  cal.iterations_treated = treated.iterations;
  cal.iterations_control = control.iterations;
  cal.residual_treated = treated.residual;
  cal.residual_control = control.residual;
  cal.feasibility_margin = std::min(treated.feasibility_margin, control.feasibility_margin);
  cal.dropped_columns = cm.treated.dropped() + cm.control.dropped();
  cal.normalized = options.normalized_weights;
  return cal;
}

}  // namespace mrate
