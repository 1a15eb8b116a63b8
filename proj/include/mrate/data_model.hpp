#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mrate {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Tabular records as read from a CSV: NaN marks a missing or unparseable cell.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  // Index of a named column, or -1.
  std::ptrdiff_t column_index(std::string_view name) const;
};

// O = (Y, A, W). Immutable after construction; the constructor enforces
// binary treatment, finite values, matching lengths and non-empty groups.
class CausalDataset {
 public:
  CausalDataset(Vector y, Vector a, Matrix w, std::vector<std::size_t> source_rows = {},
                std::size_t dropped_rows = 0);

  const Vector& y() const noexcept { return y_; }
  const Vector& a() const noexcept { return a_; }
  const Matrix& w() const noexcept { return w_; }

  std::size_t n() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t n1() const noexcept { return n1_; }
  std::size_t n0() const noexcept { return n0_; }
  std::size_t p() const noexcept { return static_cast<std::size_t>(w_.cols()); }
  bool treated(std::size_t i) const noexcept { return a_[static_cast<Eigen::Index>(i)] == 1.0; }

  // Rows removed at ingestion, and the original row index of every kept row.
  std::size_t dropped_rows() const noexcept { return dropped_rows_; }
  const std::vector<std::size_t>& source_rows() const noexcept { return source_rows_; }

  // Same A and W with a different outcome vector.
  CausalDataset with_outcome(Vector y) const;
  // Rows picked by index (repeats allowed). Throws EmptyGroup if a group vanishes.
  CausalDataset select_rows(std::span<const std::size_t> rows) const;

 private:
  Vector y_;
  Vector a_;
  Matrix w_;
  std::vector<std::size_t> source_rows_;
  std::size_t dropped_rows_ = 0;
  std::size_t n1_ = 0;
  std::size_t n0_ = 0;
};

// Listwise deletion of rows with any non-finite cell, then CausalDataset
// construction. Requires columns "y" and "a"; every other column is a covariate.
CausalDataset validate_dataset(const RawTable& raw);

// K propensity columns and L outcome pairs (Q(1), Q(0)) from any model pool.
class PredictionBundle {
 public:
  PredictionBundle() = default;
  PredictionBundle(Matrix ps, Matrix out1, Matrix out0, std::vector<std::string> labels = {});

  // Empty pool (K = L = 0) over n rows.
  static PredictionBundle empty(std::size_t n);

  const Matrix& ps() const noexcept { return ps_; }
  const Matrix& out1() const noexcept { return out1_; }
  const Matrix& out0() const noexcept { return out0_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  std::size_t n() const noexcept { return static_cast<std::size_t>(rows_); }
  std::size_t k() const noexcept { return static_cast<std::size_t>(ps_.cols()); }
  std::size_t l() const noexcept { return static_cast<std::size_t>(out1_.cols()); }

  PredictionBundle with_ps(const Vector& g, std::string label) const;
  PredictionBundle with_outcome(const Vector& q1, const Vector& q0, std::string label) const;
  PredictionBundle select_rows(std::span<const std::size_t> rows) const;

 private:
  Eigen::Index rows_ = 0;
  Matrix ps_;
  Matrix out1_;
  Matrix out0_;
  std::vector<std::string> labels_;
};

// Centered constraint columns for one side, after dropping degenerate and
// duplicate columns. `kept` maps each column back to its position in the
// original K+L ordering (PS columns first).
struct ConstraintSide {
  Matrix columns;
  std::vector<std::size_t> kept;
  std::size_t duplicates = 0;
  std::size_t degenerate = 0;

  std::size_t dropped() const noexcept { return duplicates + degenerate; }
};

struct ConstraintMatrices {
  ConstraintSide treated;  // rows of C^1 for all n observations
  ConstraintSide control;  // rows of C^0 for all n observations
  std::size_t ps_columns = 0;
  std::size_t outcome_columns = 0;

  const Matrix& c1() const noexcept { return treated.columns; }
  const Matrix& c0() const noexcept { return control.columns; }
  std::size_t n() const noexcept { return static_cast<std::size_t>(treated.columns.rows()); }
};

inline constexpr double kDedupTolerance = 1e-12;

ConstraintMatrices build_constraint_matrices(const CausalDataset& ds, const PredictionBundle& pb);

enum class Method { MR, IPW, NIPW, AIPW, NAIPW, GeneralEE };

std::string_view method_name(Method m) noexcept;
// Throws InvalidInput on unknown names.
Method parse_method(std::string_view name);

struct EstimateDiagnostics {
  int iterations_treated = 0;
  int iterations_control = 0;
  double residual_treated = 0.0;
  double residual_control = 0.0;
  double feasibility_margin = 1.0;
  std::size_t dropped_columns = 0;
};

struct AteEstimate {
  Method method = Method::MR;
  double beta1 = 0.0;
  double beta0 = 0.0;
  double beta = 0.0;
  double variance = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  EstimateDiagnostics diagnostics;
};

}  // namespace mrate
