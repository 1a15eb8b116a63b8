#include "mrate/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mrate/error.hpp"
#include "mrate/mlp.hpp"
#include "mrate/parallel.hpp"

namespace mrate {

namespace {

constexpr int kLogisticMaxIterations = 50;
constexpr double kLogisticTolerance = 1e-8;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double squash_ps(double g) { return std::clamp(g, kPsFloor, 1.0 - kPsFloor); }

std::vector<std::size_t> resolve_features(const LearnerSpec& spec, std::size_t p) {
  if (spec.features.empty()) {
    std::vector<std::size_t> all(p);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  for (auto f : spec.features) {
    if (f >= p) fail(ErrorCode::InvalidInput, "learner feature index out of range", {{"feature", f}, {"p", p}});
  }
  return spec.features;
}

Matrix take_columns(const Matrix& w, const std::vector<std::size_t>& cols) {
  Matrix out(w.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = w.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

// --- logistic -------------------------------------------------------------

class LogisticModel final : public FittedModel {
 public:
  LogisticModel(Vector coef, std::vector<std::size_t> features) : coef_(std::move(coef)), features_(std::move(features)) {}

  LearnerOutput predict(const Matrix& w) const override {
    const Matrix x = take_columns(w, features_);
    Vector eta = (x * coef_.tail(coef_.size() - 1)).array() + coef_[0];
    Vector g(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) g[i] = squash_ps(sigmoid(eta[i]));
    return {g, std::nullopt, std::nullopt};
  }

 private:
  Vector coef_;
  std::vector<std::size_t> features_;
};

double logistic_objective(const Matrix& x, const Vector& a, const Vector& beta, double lambda) {
  const Vector z = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) ll += a[i] * z[i] - softplus(z[i]);
  return ll - 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
}

std::unique_ptr<FittedModel> fit_logistic(const LearnerSpec& spec, const CausalDataset& ds) {
  auto features = resolve_features(spec, ds.p());
  const Eigen::Index n = static_cast<Eigen::Index>(ds.n());
  const Eigen::Index d = static_cast<Eigen::Index>(features.size()) + 1;
  Matrix x(n, d);
  x.col(0).setOnes();
  x.rightCols(d - 1) = take_columns(ds.w(), features);
  const double lambda = spec.ridge_lambda;
  if (lambda == 0.0 && Eigen::ColPivHouseholderQR<Matrix>(x).rank() < d) {
    fail(ErrorCode::SingularDesign, "logistic design is rank deficient", {{"columns", d}});
  }
  const Vector& a = ds.a();
  Vector beta = Vector::Zero(d);
  Vector penalty = Vector::Constant(d, lambda);
  penalty[0] = 0.0;
  double objective = logistic_objective(x, a, beta, lambda);
  for (int it = 0; it < kLogisticMaxIterations; ++it) {
    const Vector z = x * beta;
    Vector p(n), wts(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(z[i]);
      wts[i] = p[i] * (1.0 - p[i]);
    }
    const Vector grad = x.transpose() * (a - p) - penalty.cwiseProduct(beta);
    if (grad.cwiseAbs().maxCoeff() <= kLogisticTolerance) break;
    Matrix h = x.transpose() * wts.asDiagonal() * x;
    h.diagonal() += penalty;
    h.diagonal().array() += 1e-10 * (1.0 + h.trace()) / static_cast<double>(d);
    const Vector step = h.ldlt().solve(grad);
    if (!step.allFinite()) break;
    double t = 1.0;
    bool improved = false;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      const Vector trial = beta + t * step;
      const double obj = logistic_objective(x, a, trial, lambda);
      if (std::isfinite(obj) && obj >= objective) {
        beta = trial;
        objective = obj;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return std::make_unique<LogisticModel>(std::move(beta), std::move(features));
}

// --- ridge ----------------------------------------------------------------

class RidgeModel final : public FittedModel {
 public:
  RidgeModel(Vector coef, std::vector<std::size_t> features) : coef_(std::move(coef)), features_(std::move(features)) {}

  LearnerOutput predict(const Matrix& w) const override {
    const Matrix x = take_columns(w, features_);
    const Vector base = (x * coef_.tail(coef_.size() - 2)).array() + coef_[0];
    Vector q0 = base;
    Vector q1 = base.array() + coef_[1];
    return {std::nullopt, std::move(q1), std::move(q0)};
  }

 private:
  Vector coef_;  // intercept, treatment, covariates
  std::vector<std::size_t> features_;
};

std::unique_ptr<FittedModel> fit_ridge(const LearnerSpec& spec, const CausalDataset& ds) {
  auto features = resolve_features(spec, ds.p());
  const Eigen::Index n = static_cast<Eigen::Index>(ds.n());
  const Eigen::Index d = static_cast<Eigen::Index>(features.size()) + 2;
  Matrix x(n, d);
  x.col(0).setOnes();
  x.col(1) = ds.a();
  x.rightCols(d - 2) = take_columns(ds.w(), features);
  Vector coef;
  if (spec.ridge_lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < d) fail(ErrorCode::SingularDesign, "ridge design is rank deficient", {{"columns", d}});
    coef = qr.solve(ds.y());
  } else {
    Matrix g = x.transpose() * x;
    g.diagonal().tail(d - 1).array() += spec.ridge_lambda;
    coef = g.llt().solve(x.transpose() * ds.y());
  }
  return std::make_unique<RidgeModel>(std::move(coef), std::move(features));
}

// --- MLP ------------------------------------------------------------------

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt((x.col(j).array() - s.mean[j]).square().mean());
      s.scale[j] = sd < 1e-12 ? 1.0 : sd;
    }
    return s;
  }

  RowMatrix apply(const Matrix& x) const {
    RowMatrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = (x.col(j).array() - mean[j]) / scale[j];
    return out;
  }
};

class MlpModel final : public FittedModel {
 public:
  MlpModel(const LearnerSpec& spec, const CausalDataset& ds) : mode_(spec.mlp_mode), features_(resolve_features(spec, ds.p())) {
    const Matrix w = take_columns(ds.w(), features_);
    scaler_ = Standardizer::fit(w);
    const RowMatrix x = scaler_.apply(w);
    y_mean_ = ds.y().mean();
    const double sd = std::sqrt((ds.y().array() - y_mean_).square().mean());
    y_scale_ = sd < 1e-12 ? 1.0 : sd;
    const Vector ys = (ds.y().array() - y_mean_) / y_scale_;
    const std::span<const double> a(ds.a().data(), ds.n());
    const std::span<const double> y(ys.data(), ds.n());

    const std::size_t p = features_.size();
    const std::size_t batch = spec.batch_size == 0 ? std::max<std::size_t>(1, 3 * p) : spec.batch_size;
    const AdamOptions adam{spec.learning_rate, spec.momentum_beta1, 0.999, 1e-8};

    if (mode_ == MlpMode::Joint) {
      joint_.emplace(MlpArchitecture{std::max<std::size_t>(p, 1), spec.hidden_layers, true, true}, spec.seed);
      joint_->train(inputs_or_bias(x), a, y, spec.epochs, batch, spec.l1_strength, adam, spec.seed);
    } else {
      ps_net_.emplace(MlpArchitecture{std::max<std::size_t>(p, 1), spec.hidden_layers, true, false}, spec.seed);
      ps_net_->train(inputs_or_bias(x), a, y, spec.epochs, batch, spec.l1_strength, adam, spec.seed);
      const RowMatrix xa = with_treatment(x, ds.a());
      outcome_net_.emplace(MlpArchitecture{p + 1, spec.hidden_layers, false, true}, spec.seed + 1);
      outcome_net_->train(xa, a, y, spec.epochs, batch, spec.l1_strength, adam, spec.seed + 1);
    }
  }

  LearnerOutput predict(const Matrix& w) const override {
    const RowMatrix x = inputs_or_bias(scaler_.apply(take_columns(w, features_)));
    const Eigen::Index n = x.rows();
    Vector g(n), q1(n), q0(n);
    if (mode_ == MlpMode::Joint) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto o1 = joint_->forward(x.row(i).data(), 1.0);
        const auto o0 = joint_->forward(x.row(i).data(), 0.0);
        g[i] = squash_ps(sigmoid(o1.ps_logit));
        q1[i] = o1.outcome * y_scale_ + y_mean_;
        q0[i] = o0.outcome * y_scale_ + y_mean_;
      }
    } else {
      const RowMatrix raw = scaler_.apply(take_columns(w, features_));
      const RowMatrix x1 = with_treatment(raw, Vector::Ones(n));
      const RowMatrix x0 = with_treatment(raw, Vector::Zero(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        g[i] = squash_ps(sigmoid(ps_net_->forward(x.row(i).data(), 0.0).ps_logit));
        q1[i] = outcome_net_->forward(x1.row(i).data(), 1.0).outcome * y_scale_ + y_mean_;
        q0[i] = outcome_net_->forward(x0.row(i).data(), 0.0).outcome * y_scale_ + y_mean_;
      }
    }
    return {std::move(g), std::move(q1), std::move(q0)};
  }

 private:
  // An empty feature subset still gets one constant input.
  static RowMatrix inputs_or_bias(RowMatrix x) {
    if (x.cols() > 0) return x;
    return RowMatrix::Zero(x.rows(), 1);
  }

  static RowMatrix with_treatment(const RowMatrix& x, const Vector& a) {
    RowMatrix out(x.rows(), x.cols() + 1);
    out.leftCols(x.cols()) = x;
    out.col(x.cols()) = a;
    return out;
  }

  MlpMode mode_;
  std::vector<std::size_t> features_;
  Standardizer scaler_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  std::optional<Mlp> joint_;
  std::optional<Mlp> ps_net_;
  std::optional<Mlp> outcome_net_;
};

// --- fold helpers ---------------------------------------------------------

double mean_ignoring_nan(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) {
    if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
    s += x;
  }
  return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(xs.size());
}

}  // namespace

void LearnerSpec::validate() const {
  for (auto w : hidden_layers) {
    if (w == 0) fail(ErrorCode::InvalidInput, "hidden layer widths must be >= 1");
  }
  if (kind == LearnerKind::MLP && hidden_layers.empty()) fail(ErrorCode::InvalidInput, "MLP needs at least one hidden layer");
  if (epochs == 0) fail(ErrorCode::InvalidInput, "epochs must be >= 1");
  if (!(l1_strength >= 0.0)) fail(ErrorCode::InvalidInput, "l1_strength must be nonnegative");
  if (!(ridge_lambda >= 0.0)) fail(ErrorCode::InvalidInput, "ridge_lambda must be nonnegative");
  if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidInput, "learning_rate must be positive");
  if (!(momentum_beta1 >= 0.0 && momentum_beta1 < 1.0)) fail(ErrorCode::InvalidInput, "momentum_beta1 must be in [0, 1)");
}

std::string LearnerSpec::label() const {
  std::ostringstream os;
  os << learner_kind_name(kind);
  if (kind == LearnerKind::MLP) {
    os << '-' << mlp_mode_name(mlp_mode) << '[';
    for (std::size_t i = 0; i < hidden_layers.size(); ++i) os << (i ? "," : "") << hidden_layers[i];
    os << "]-l1=" << l1_strength << "-e=" << epochs << "-s=" << seed;
  } else if (kind != LearnerKind::Oracle && ridge_lambda > 0.0) {
    os << "-lambda=" << ridge_lambda;
  }
  if (!features.empty()) {
    os << "-f=";
    for (std::size_t i = 0; i < features.size(); ++i) os << (i ? "," : "") << features[i];
  }
  return os.str();
}

std::string_view learner_kind_name(LearnerKind k) noexcept {
  switch (k) {
    case LearnerKind::Logistic: return "logistic";
    case LearnerKind::Ridge: return "ridge";
    case LearnerKind::MLP: return "mlp";
    case LearnerKind::Oracle: return "oracle";
  }
  return "unknown";
}

LearnerKind parse_learner_kind(std::string_view name) {
  for (auto k : {LearnerKind::Logistic, LearnerKind::Ridge, LearnerKind::MLP, LearnerKind::Oracle}) {
    if (name == learner_kind_name(k)) return k;
  }
  fail(ErrorCode::InvalidInput, "unknown learner kind: " + std::string(name));
}

std::string_view mlp_mode_name(MlpMode m) noexcept { return m == MlpMode::Joint ? "joint" : "disjoint"; }

MlpMode parse_mlp_mode(std::string_view name) {
  if (name == "joint") return MlpMode::Joint;
  if (name == "disjoint") return MlpMode::Disjoint;
  fail(ErrorCode::InvalidInput, "unknown mlp mode: " + std::string(name));
}

std::unique_ptr<FittedModel> fit_model(const LearnerSpec& spec, const CausalDataset& ds) {
  spec.validate();
  switch (spec.kind) {
    case LearnerKind::Logistic: return fit_logistic(spec, ds);
    case LearnerKind::Ridge: return fit_ridge(spec, ds);
    case LearnerKind::MLP: return std::make_unique<MlpModel>(spec, ds);
    case LearnerKind::Oracle: break;
  }
  fail(ErrorCode::OracleUnavailable, "the oracle learner is only available inside the simulation harness");
}

LearnerOutput fit_predict(const LearnerSpec& spec, const CausalDataset& ds, const OracleTruth* oracle) {
  if (spec.kind == LearnerKind::Oracle) {
    if (oracle == nullptr) fail(ErrorCode::OracleUnavailable, "the oracle learner is only available inside the simulation harness");
    const auto n = static_cast<Eigen::Index>(ds.n());
    if (oracle->g.size() != n || oracle->q1.size() != n || oracle->q0.size() != n) {
      fail(ErrorCode::DimensionMismatch, "oracle truth does not match the dataset");
    }
    return {oracle->g, oracle->q1, oracle->q0};
  }
  return fit_model(spec, ds)->predict(ds.w());
}

// ---------------------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::DimensionMismatch, "scores and labels differ in length", {{"scores", scores.size()}, {"labels", labels.size()}});
  }
  const std::size_t n = scores.size();
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorCode::NonFinite, "non-finite score", {{"row", i}});
    if (labels[i] != 0.0 && labels[i] != 1.0) fail(ErrorCode::NonBinaryTreatment, "labels must be 0 or 1", {{"row", i}});
    n1 += labels[i] == 1.0;
  }
  const std::size_t n0 = n - n1;
  if (n1 == 0 || n0 == 0) fail(ErrorCode::OneClassOnly, "AUC needs both classes", {{"positives", n1}, {"negatives", n0}});

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  double rank_sum = 0.0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && scores[order[end]] == scores[order[start]]) ++end;
    const double avg_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) {
      if (labels[order[k]] == 1.0) rank_sum += avg_rank;
    }
    start = end;
  }
  const double d1 = static_cast<double>(n1);
  return (rank_sum - 0.5 * d1 * (d1 + 1.0)) / (d1 * static_cast<double>(n0));
}

double r_squared(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    fail(ErrorCode::DimensionMismatch, "predictions and targets differ in length");
  }
  const std::size_t n = targets.size();
  if (n < 2) fail(ErrorCode::InvalidInput, "R2 needs at least 2 targets");
  double mean = 0.0;
  for (double t : targets) mean += t;
  mean /= static_cast<double>(n);
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sse += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
    sst += (targets[i] - mean) * (targets[i] - mean);
  }
  if (!(sst > 0.0)) fail(ErrorCode::InvalidInput, "R2 is undefined for constant targets");
  return 1.0 - sse / sst;
}

double geo_metric(double r2, double d) {
  if (!(r2 > 0.0) || !(d > 0.0 && d < 1.0)) return 0.0;
  const double radicand = r2 * d * (1.0 - d);
  return radicand > 0.0 ? std::cbrt(radicand) : 0.0;
}

PredictionMetrics metrics_from(double auc_value, double r2_value) {
  PredictionMetrics m;
  m.auc = auc_value;
  m.r2 = r2_value;
  m.d = 2.0 * (auc_value - 0.5);
  m.geo = geo_metric(r2_value, m.d);
  return m;
}

PredictionMetrics compute_metrics(std::span<const double> scores, std::span<const double> labels,
                                  std::span<const double> predictions, std::span<const double> targets) {
  return metrics_from(auc(scores, labels), r_squared(predictions, targets));
}

std::string_view criterion_name(SelectionCriterion c) noexcept {
  switch (c) {
    case SelectionCriterion::R2: return "r2";
    case SelectionCriterion::AUC: return "auc";
    case SelectionCriterion::Geo: return "geo";
  }
  return "unknown";
}

SelectionCriterion parse_criterion(std::string_view name) {
  for (auto c : {SelectionCriterion::R2, SelectionCriterion::AUC, SelectionCriterion::Geo}) {
    if (name == criterion_name(c)) return c;
  }
  fail(ErrorCode::InvalidInput, "unknown selection criterion: " + std::string(name));
}

double criterion_value(const PredictionMetrics& m, SelectionCriterion c) {
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  switch (c) {
    case SelectionCriterion::R2: return std::isnan(m.r2) ? kNone : m.r2;
    case SelectionCriterion::AUC: return std::isnan(m.auc) ? kNone : m.auc;
    case SelectionCriterion::Geo: return std::isnan(m.r2) || std::isnan(m.auc) ? kNone : m.geo;
  }
  return kNone;
}

SelectionResult kfold_select(const std::vector<LearnerSpec>& specs, const CausalDataset& ds, std::size_t folds,
                             SelectionCriterion criterion, std::uint64_t seed) {
  if (specs.empty()) fail(ErrorCode::InvalidInput, "kfold_select needs at least one spec");
  const std::size_t n = ds.n();
  if (folds < 2 || folds > n) fail(ErrorCode::InvalidInput, "folds must be in [2, n]", {{"folds", folds}, {"n", n}});

  SelectionResult result;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = make_stream(seed, 0xF01D);
  std::shuffle(perm.begin(), perm.end(), rng);
  result.fold_of_row.assign(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) result.fold_of_row[perm[pos]] = pos % folds;

  std::vector<std::vector<std::size_t>> train(folds), test(folds);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < folds; ++f) (f == result.fold_of_row[i] ? test[f] : train[f]).push_back(i);
  }

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  for (const auto& spec : specs) {
    SpecEvaluation ev;
    try {
      if (spec.kind == LearnerKind::Oracle) fail(ErrorCode::OracleUnavailable, "the oracle learner cannot be cross-validated");
      Vector ps(n), q1(n), q0(n);
      bool has_ps = false;
      bool has_q = false;
      std::vector<double> aucs, r2s;
      for (std::size_t f = 0; f < folds; ++f) {
        const auto train_ds = ds.select_rows(train[f]);
        const auto model = fit_model(spec, train_ds);
        Matrix wt(static_cast<Eigen::Index>(test[f].size()), ds.w().cols());
        for (std::size_t r = 0; r < test[f].size(); ++r) wt.row(static_cast<Eigen::Index>(r)) = ds.w().row(static_cast<Eigen::Index>(test[f][r]));
        const auto out = model->predict(wt);
        has_ps = out.ps.has_value();
        has_q = out.q1.has_value();
        std::vector<double> score, label, pred, target;
        for (std::size_t r = 0; r < test[f].size(); ++r) {
          const auto i = static_cast<Eigen::Index>(test[f][r]);
          const auto ri = static_cast<Eigen::Index>(r);
          label.push_back(ds.a()[i]);
          target.push_back(ds.y()[i]);
          if (has_ps) {
            ps[i] = (*out.ps)[ri];
            score.push_back(ps[i]);
          }
          if (has_q) {
            q1[i] = (*out.q1)[ri];
            q0[i] = (*out.q0)[ri];
            pred.push_back(ds.a()[i] == 1.0 ? q1[i] : q0[i]);
          }
        }
        double fa = kNaN;
        double fr = kNaN;
        if (has_ps) {
          try {
            fa = auc(score, label);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::OneClassOnly) throw;
          }
        }
        if (has_q) {
          try {
            fr = r_squared(pred, target);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::InvalidInput) throw;
          }
        }
        aucs.push_back(fa);
        r2s.push_back(fr);
        ev.per_fold.push_back(metrics_from(fa, fr));
      }
      ev.mean = metrics_from(mean_ignoring_nan(aucs), mean_ignoring_nan(r2s));
      ev.score = criterion_value(ev.mean, criterion);
      if (has_ps) ev.out_of_fold.ps = std::move(ps);
      if (has_q) {
        ev.out_of_fold.q1 = std::move(q1);
        ev.out_of_fold.q0 = std::move(q0);
      }
    } catch (const Error& e) {
      ev = SpecEvaluation{};
      ev.failed = true;
      ev.error = std::string(error_name(e.code())) + ": " + e.what();
      ev.score = -std::numeric_limits<double>::infinity();
    }
    result.specs.push_back(std::move(ev));
  }

  bool found = false;
  for (std::size_t s = 0; s < result.specs.size(); ++s) {
    if (result.specs[s].failed) continue;
    if (!found || result.specs[s].score > result.specs[result.best].score) {
      result.best = s;
      found = true;
    }
  }
  if (!found) fail(ErrorCode::InvalidInput, "every candidate spec failed during cross-validation");
  return result;
}

}  // namespace mrate
