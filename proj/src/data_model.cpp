#include "mrate/data_model.hpp"

#include <cmath>
#include <numeric>

#include "mrate/error.hpp"
#include "mrate/kernels.hpp"

namespace mrate {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DegeneratePS: return "DegeneratePS";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::OracleUnavailable: return "OracleUnavailable";
    case ErrorCode::OneClassOnly: return "OneClassOnly";
    case ErrorCode::ImbalanceExhausted: return "ImbalanceExhausted";
    case ErrorCode::AllReplicationsFailed: return "AllReplicationsFailed";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
  }
  return "Unknown";
}

std::ptrdiff_t RawTable::column_index(std::string_view name) const {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] == name) return static_cast<std::ptrdiff_t>(j);
  }
  return -1;
}

CausalDataset::CausalDataset(Vector y, Vector a, Matrix w, std::vector<std::size_t> source_rows,
                             std::size_t dropped_rows)
    : y_(std::move(y)),
      a_(std::move(a)),
      w_(std::move(w)),
      source_rows_(std::move(source_rows)),
      dropped_rows_(dropped_rows) {
  const Eigen::Index n = y_.size();
  if (a_.size() != n || w_.rows() != n) {
    fail(ErrorCode::DimensionMismatch, "y, a and w must have the same number of rows");
  }
  if (source_rows_.empty()) {
    source_rows_.resize(static_cast<std::size_t>(n));
    std::iota(source_rows_.begin(), source_rows_.end(), std::size_t{0});
  } else if (source_rows_.size() != static_cast<std::size_t>(n)) {
    fail(ErrorCode::DimensionMismatch, "source row map has the wrong length");
  }
  if (!y_.allFinite() || !w_.allFinite()) fail(ErrorCode::NonFinite, "outcome or covariates contain non-finite values");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (a_[i] == 1.0) {
      ++n1_;
    } else if (a_[i] == 0.0) {
      ++n0_;
    } else {
      fail(ErrorCode::NonBinaryTreatment, "treatment value " + std::to_string(a_[i]) + " at row " +
                                              std::to_string(source_rows_[static_cast<std::size_t>(i)]) +
                                              " is not 0 or 1");
    }
  }
  if (n1_ == 0 || n0_ == 0) {
    fail(ErrorCode::EmptyGroup, n1_ == 0 ? "no treated rows" : "no control rows",
         {{"n1", n1_}, {"n0", n0_}});
  }
}

CausalDataset CausalDataset::with_outcome(Vector y) const {
  return CausalDataset(std::move(y), a_, w_, source_rows_, dropped_rows_);
}

CausalDataset CausalDataset::select_rows(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Vector y(m), a(m);
  Matrix w(m, w_.cols());
  std::vector<std::size_t> src(rows.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    y[i] = y_[r];
    a[i] = a_[r];
    w.row(i) = w_.row(r);
    src[static_cast<std::size_t>(i)] = source_rows_[static_cast<std::size_t>(r)];
  }
  return CausalDataset(std::move(y), std::move(a), std::move(w), std::move(src), 0);
}

CausalDataset validate_dataset(const RawTable& raw) {
  const std::ptrdiff_t iy = raw.column_index("y");
  const std::ptrdiff_t ia = raw.column_index("a");
  if (iy < 0 || ia < 0) fail(ErrorCode::InvalidInput, "dataset needs columns 'y' and 'a'");
  if (raw.rows.size() < 2) fail(ErrorCode::InvalidInput, "dataset needs at least 2 rows");

  std::vector<std::size_t> covariates;
  for (std::size_t j = 0; j < raw.columns.size(); ++j) {
    if (static_cast<std::ptrdiff_t>(j) != iy && static_cast<std::ptrdiff_t>(j) != ia) covariates.push_back(j);
  }

  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    if (row.size() != raw.columns.size()) {
      fail(ErrorCode::DimensionMismatch, "row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                                             " cells, expected " + std::to_string(raw.columns.size()));
    }
    bool finite = true;
    for (double v : row) finite = finite && std::isfinite(v);
    if (finite) kept.push_back(r);
  }
  if (kept.empty()) fail(ErrorCode::NonFinite, "every row contains a missing or non-finite value");

  const auto n = static_cast<Eigen::Index>(kept.size());
  Vector y(n), a(n);
  Matrix w(n, static_cast<Eigen::Index>(covariates.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = raw.rows[kept[static_cast<std::size_t>(i)]];
    y[i] = row[static_cast<std::size_t>(iy)];
    a[i] = row[static_cast<std::size_t>(ia)];
    for (std::size_t j = 0; j < covariates.size(); ++j) w(i, static_cast<Eigen::Index>(j)) = row[covariates[j]];
  }
  return CausalDataset(std::move(y), std::move(a), std::move(w), std::move(kept), raw.rows.size() - kept.size());
}

PredictionBundle::PredictionBundle(Matrix ps, Matrix out1, Matrix out0, std::vector<std::string> labels)
    : ps_(std::move(ps)), out1_(std::move(out1)), out0_(std::move(out0)), labels_(std::move(labels)) {
  if (out1_.cols() != out0_.cols()) fail(ErrorCode::DimensionMismatch, "out1 and out0 column counts differ");
  rows_ = ps_.cols() > 0 ? ps_.rows() : out1_.rows();
  if ((ps_.cols() > 0 && ps_.rows() != rows_) || (out1_.cols() > 0 && out1_.rows() != rows_) ||
      out0_.rows() != out1_.rows()) {
    fail(ErrorCode::DimensionMismatch, "prediction columns have different row counts");
  }
  if (ps_.cols() == 0) ps_.resize(rows_, 0);
  if (out1_.cols() == 0) {
    out1_.resize(rows_, 0);
    out0_.resize(rows_, 0);
  }
  for (Eigen::Index j = 0; j < ps_.cols(); ++j) {
    for (Eigen::Index i = 0; i < rows_; ++i) {
      const double g = ps_(i, j);
      if (!(g > 0.0 && g < 1.0)) {
        fail(ErrorCode::InvalidInput, "propensity column " + std::to_string(j) + " row " + std::to_string(i) +
                                          " is outside (0, 1)");
      }
    }
  }
  if (!out1_.allFinite() || !out0_.allFinite()) fail(ErrorCode::NonFinite, "outcome predictions contain non-finite values");
  const std::size_t total = k() + l();
  if (labels_.empty()) {
    for (std::size_t j = 0; j < k(); ++j) labels_.push_back("ps_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < l(); ++j) labels_.push_back("q_" + std::to_string(j + 1));
  } else if (labels_.size() != total) {
    fail(ErrorCode::DimensionMismatch, "expected " + std::to_string(total) + " labels");
  }
}

PredictionBundle PredictionBundle::empty(std::size_t n) {
  const auto rows = static_cast<Eigen::Index>(n);
  PredictionBundle pb;
  pb.rows_ = rows;
  pb.ps_.resize(rows, 0);
  pb.out1_.resize(rows, 0);
  pb.out0_.resize(rows, 0);
  return pb;
}

PredictionBundle PredictionBundle::with_ps(const Vector& g, std::string label) const {
  if (k() + l() > 0 && g.size() != rows_) fail(ErrorCode::DimensionMismatch, "propensity column has the wrong length");
  const Eigen::Index rows = k() + l() > 0 ? rows_ : g.size();
  Matrix ps(rows, ps_.cols() + 1);
  if (ps_.cols() > 0) ps.leftCols(ps_.cols()) = ps_;
  ps.col(ps_.cols()) = g;
  std::vector<std::string> labels(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(k()));
  labels.push_back(std::move(label));
  labels.insert(labels.end(), labels_.begin() + static_cast<std::ptrdiff_t>(k()), labels_.end());
  Matrix o1 = out1_, o0 = out0_;
  if (o1.cols() == 0) {
    o1.resize(rows, 0);
    o0.resize(rows, 0);
  }
  return PredictionBundle(std::move(ps), std::move(o1), std::move(o0), std::move(labels));
}

PredictionBundle PredictionBundle::with_outcome(const Vector& q1, const Vector& q0, std::string label) const {
  if (q1.size() != q0.size()) fail(ErrorCode::DimensionMismatch, "Q(1) and Q(0) lengths differ");
  if (k() + l() > 0 && q1.size() != rows_) fail(ErrorCode::DimensionMismatch, "outcome column has the wrong length");
  const Eigen::Index rows = k() + l() > 0 ? rows_ : q1.size();
  Matrix o1(rows, out1_.cols() + 1), o0(rows, out0_.cols() + 1);
  if (out1_.cols() > 0) {
    o1.leftCols(out1_.cols()) = out1_;
    o0.leftCols(out0_.cols()) = out0_;
  }
  o1.col(out1_.cols()) = q1;
  o0.col(out0_.cols()) = q0;
  std::vector<std::string> labels = labels_;
  labels.push_back(std::move(label));
  Matrix ps = ps_;
  if (ps.cols() == 0) ps.resize(rows, 0);
  return PredictionBundle(std::move(ps), std::move(o1), std::move(o0), std::move(labels));
}

PredictionBundle PredictionBundle::select_rows(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix ps(m, ps_.cols()), o1(m, out1_.cols()), o0(m, out0_.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    ps.row(i) = ps_.row(r);
    o1.row(i) = out1_.row(r);
    o0.row(i) = out0_.row(r);
  }
  PredictionBundle pb;
  pb.rows_ = m;
  pb.ps_ = std::move(ps);
  pb.out1_ = std::move(o1);
  pb.out0_ = std::move(o0);
  pb.labels_ = labels_;
  return pb;
}

namespace {

double column_mean(const Matrix& m, Eigen::Index j) {
  const auto n = static_cast<std::size_t>(m.rows());
  return kernels::sum({m.col(j).data(), n}) / static_cast<double>(n);
}

double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Keeps candidate columns that are neither near-zero nor near-duplicates of
// an earlier kept column.
ConstraintSide dedup(const Matrix& candidates) {
  ConstraintSide side;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < candidates.cols(); ++j) {
    const Vector col = candidates.col(j);
    if (max_abs(col) < kDedupTolerance) {
      ++side.degenerate;
      continue;
    }
    bool duplicate = false;
    for (Eigen::Index kept : keep) {
      if ((candidates.col(kept) - col).cwiseAbs().maxCoeff() < kDedupTolerance) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      ++side.duplicates;
      continue;
    }
    keep.push_back(j);
  }
  side.columns.resize(candidates.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    side.columns.col(static_cast<Eigen::Index>(c)) = candidates.col(keep[c]);
    side.kept.push_back(static_cast<std::size_t>(keep[c]));
  }
  return side;
}

}  // namespace

ConstraintMatrices build_constraint_matrices(const CausalDataset& ds, const PredictionBundle& pb) {
  if (pb.n() != ds.n() && pb.k() + pb.l() > 0) {
    fail(ErrorCode::DimensionMismatch, "prediction bundle has " + std::to_string(pb.n()) + " rows, dataset has " +
                                           std::to_string(ds.n()));
  }
  const auto n = static_cast<Eigen::Index>(ds.n());
  const auto K = static_cast<Eigen::Index>(pb.k());
  const auto L = static_cast<Eigen::Index>(pb.l());
  Matrix c1(n, K + L), c0(n, K + L);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double mean = column_mean(pb.ps(), k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double centered = pb.ps()(i, k) - mean;
      c1(i, k) = centered;
      c0(i, k) = -centered;
    }
  }
  for (Eigen::Index l = 0; l < L; ++l) {
    const double mean1 = column_mean(pb.out1(), l);
    const double mean0 = column_mean(pb.out0(), l);
    for (Eigen::Index i = 0; i < n; ++i) {
      c1(i, K + l) = pb.out1()(i, l) - mean1;
      c0(i, K + l) = pb.out0()(i, l) - mean0;
    }
  }
  ConstraintMatrices cm;
  cm.treated = dedup(c1);
  cm.control = dedup(c0);
  cm.ps_columns = pb.k();
  cm.outcome_columns = pb.l();
  return cm;
}

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::MR: return "MR";
    case Method::IPW: return "IPW";
    case Method::NIPW: return "nIPW";
    case Method::AIPW: return "AIPW";
    case Method::NAIPW: return "nAIPW";
    case Method::GeneralEE: return "GeneralEE";
  }
  return "MR";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::MR, Method::IPW, Method::NIPW, Method::AIPW, Method::NAIPW, Method::GeneralEE}) {
    if (method_name(m) == name) return m;
  }
  fail(ErrorCode::InvalidInput, "unknown estimator '" + std::string(name) + "'");
}

}  // namespace mrate
