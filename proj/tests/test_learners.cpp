#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mrate/error.hpp"
#include "mrate/learners.hpp"
#include "mrate/mlp.hpp"
#include "oracles.hpp"

using namespace mrate;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mrate::Error");
  return ErrorCode::InvalidInput;
}

CausalDataset synthetic(std::size_t n, std::size_t p, std::uint64_t seed, double noise = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix w(rows, static_cast<Eigen::Index>(p));
  Vector a(rows), y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = z(rng);
    a[i] = u(rng) < 1.0 / (1.0 + std::exp(-(w(i, 0) - 0.5 * w(i, 1)))) ? 1.0 : 0.0;
    y[i] = 1.0 + a[i] + 2.0 * w(i, 0) - w(i, 1) + noise * z(rng);
  }
  a[0] = 1.0;
  a[1] = 0.0;
  return CausalDataset(y, a, w);
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

LearnerSpec small_mlp(MlpMode mode, std::uint64_t seed) {
  LearnerSpec s;
  s.kind = LearnerKind::MLP;
  s.mlp_mode = mode;
  s.hidden_layers = {6};
  s.epochs = 15;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("ridge recovers an exactly linear outcome") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Matrix w(30, 3);
  Vector a(30), y(30);
  for (Eigen::Index i = 0; i < 30; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) w(i, j) = z(rng);
    a[i] = i % 3 == 0 ? 1.0 : 0.0;
    y[i] = 0.5 + 2.0 * a[i] - w(i, 0) + 3.0 * w(i, 2);
  }
  const CausalDataset ds(y, a, w);
  LearnerSpec spec;
  spec.kind = LearnerKind::Ridge;
  const auto out = fit_predict(spec, ds);
  REQUIRE(out.q1.has_value());
  CHECK_FALSE(out.ps.has_value());
  std::vector<double> pred;
  for (Eigen::Index i = 0; i < 30; ++i) pred.push_back(a[i] == 1.0 ? (*out.q1)[i] : (*out.q0)[i]);
  CHECK(r_squared(pred, to_std(y)) >= 1.0 - 1e-8);
  CHECK(((*out.q1) - (*out.q0)).cwiseAbs().maxCoeff() == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("ridge and logistic reject a singular design without penalty") {
  Matrix w(10, 2);
  Vector a(10), y(10);
  for (Eigen::Index i = 0; i < 10; ++i) {
    w(i, 0) = static_cast<double>(i);
    w(i, 1) = 2.0 * static_cast<double>(i);
    a[i] = i % 2 == 0 ? 1.0 : 0.0;
    y[i] = static_cast<double>(i % 3);
  }
  const CausalDataset ds(y, a, w);
  LearnerSpec ridge;
  ridge.kind = LearnerKind::Ridge;
  CHECK(code_of([&] { fit_predict(ridge, ds); }) == ErrorCode::SingularDesign);
  LearnerSpec logit;
  logit.kind = LearnerKind::Logistic;
  CHECK(code_of([&] { fit_predict(logit, ds); }) == ErrorCode::SingularDesign);
  ridge.ridge_lambda = 0.1;
  logit.ridge_lambda = 0.1;
  CHECK_NOTHROW(fit_predict(ridge, ds));
  CHECK_NOTHROW(fit_predict(logit, ds));
}

TEST_CASE("logistic under perfect separation stays on the right side") {
  Matrix w(8, 1);
  Vector a(8), y = Vector::Zero(8);
  for (Eigen::Index i = 0; i < 8; ++i) {
    w(i, 0) = static_cast<double>(i) - 3.5;
    a[i] = i >= 4 ? 1.0 : 0.0;
  }
  const CausalDataset ds(y, a, w);
  LearnerSpec spec;
  spec.kind = LearnerKind::Logistic;
  const auto out = fit_predict(spec, ds);
  REQUIRE(out.ps.has_value());
  for (Eigen::Index i = 0; i < 8; ++i) {
    CHECK(((*out.ps)[i] > 0.5) == (a[i] == 1.0));
    CHECK((*out.ps)[i] >= kPsFloor);
    CHECK((*out.ps)[i] <= 1.0 - kPsFloor);
  }
}

TEST_CASE("logistic fit beats chance on a logistic dataset") {
  const auto ds = synthetic(400, 3, 2);
  LearnerSpec spec;
  spec.kind = LearnerKind::Logistic;
  const auto out = fit_predict(spec, ds);
  CHECK(auc(to_std(*out.ps), to_std(ds.a())) > 0.7);
}

TEST_CASE("MLP gradients match central differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  RowMatrix x(5, 2);
  std::vector<double> a{1, 0, 1, 0, 1}, y{0.3, -1.2, 0.8, 0.1, 2.0};
  for (Eigen::Index i = 0; i < 5; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = z(rng);
  }
  const std::vector<std::size_t> batch{0, 1, 2, 3, 4};
  for (const auto& hidden : {std::vector<std::size_t>{1}, std::vector<std::size_t>{3, 2}}) {
    for (const auto& heads : {std::pair{true, true}, std::pair{true, false}, std::pair{false, true}}) {
      Mlp net({2, hidden, heads.first, heads.second}, 11);
      // Keep every unit away from the ReLU kink.
      for (auto& p : net.parameters()) p = 0.3 + 0.4 * std::abs(z(rng));
      for (double l1 : {0.0, 0.01}) {
        std::vector<double> grad;
        net.gradient(x, a, y, batch, l1, grad);
        REQUIRE(grad.size() == net.parameter_count());
        for (std::size_t k = 0; k < grad.size(); ++k) {
          const double keep = net.parameters()[k];
          const double h = 1e-6 * std::max(1.0, std::abs(keep));
          net.parameters()[k] = keep + h;
          const double up = net.loss(x, a, y, batch, l1);
          net.parameters()[k] = keep - h;
          const double down = net.loss(x, a, y, batch, l1);
          net.parameters()[k] = keep;
          const double fd = (up - down) / (2.0 * h);
          CHECK(std::abs(grad[k] - fd) <= 1e-4 * std::max(1e-3, std::abs(fd)));
        }
      }
    }
  }
}

TEST_CASE("MLP training reduces the loss and is reproducible") {
  const auto ds = synthetic(200, 4, 4);
  RowMatrix x = ds.w();
  std::vector<double> a = to_std(ds.a()), y = to_std(ds.y());
  std::vector<std::size_t> all(200);
  for (std::size_t i = 0; i < 200; ++i) all[i] = i;
  Mlp net({4, {8}, true, true}, 5);
  const double before = net.loss(x, a, y, all, 0.0);
  net.train(x, a, y, 30, 12, 0.0, {}, 9);
  CHECK(net.loss(x, a, y, all, 0.0) < before);

  for (auto mode : {MlpMode::Joint, MlpMode::Disjoint}) {
    const auto spec = small_mlp(mode, 21);
    const auto p1 = fit_predict(spec, ds);
    const auto p2 = fit_predict(spec, ds);
    CHECK(*p1.ps == *p2.ps);
    CHECK(*p1.q1 == *p2.q1);
    CHECK(*p1.q0 == *p2.q0);
    CHECK(p1.ps->minCoeff() >= kPsFloor);
    CHECK(p1.ps->maxCoeff() <= 1.0 - kPsFloor);
    auto other = spec;
    other.seed = 22;
    CHECK(*fit_predict(other, ds).ps != *p1.ps);
  }
}

TEST_CASE("oracle learner") {
  const auto ds = synthetic(20, 2, 5);
  LearnerSpec spec;
  spec.kind = LearnerKind::Oracle;
  CHECK(code_of([&] { fit_predict(spec, ds); }) == ErrorCode::OracleUnavailable);
  const OracleTruth truth{Vector::Constant(20, 0.3), Vector::Constant(20, 2.0), Vector::Constant(20, 1.0)};
  const auto out = fit_predict(spec, ds, &truth);
  CHECK(*out.ps == truth.g);
  CHECK(*out.q1 == truth.q1);
  CHECK(*out.q0 == truth.q0);
}

TEST_CASE("AUC matches pair counting and ignores monotone transforms") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2}, std::vector<double>{1, 1, 0}) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<double>{1, 0, 1, 0}) == 0.5);
  CHECK(code_of([] { auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}); }) == ErrorCode::OneClassOnly);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> level(0, 6);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> s, l;
    for (int i = 0; i < 25 + rep; ++i) {
      s.push_back(level(rng) * 0.25);
      l.push_back(i % 3 == 0 ? 1.0 : 0.0);
    }
    const double value = auc(s, l);
    CHECK(value == doctest::Approx(oracle::auc_pairs(s, l)).epsilon(1e-14));
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3.0 * v) - 7.0);
    CHECK(auc(t, l) == value);
  }
}

TEST_CASE("R-squared") {
  CHECK(r_squared(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == 1.0);
  CHECK(r_squared(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(code_of([] { r_squared(std::vector<double>{1}, std::vector<double>{1}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { r_squared(std::vector<double>{1, 2}, std::vector<double>{4, 4}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("geo metric") {
  const auto m = metrics_from(0.8, 0.5);
  CHECK(m.d == 2.0 * (0.8 - 0.5));
  CHECK(m.geo == doctest::Approx(0.493242).epsilon(1e-6));
  CHECK(m.geo == doctest::Approx(std::cbrt(0.5 * 0.6 * 0.4)).epsilon(1e-15));
  CHECK(metrics_from(0.5, 0.9).geo == 0.0);
  CHECK(metrics_from(1.0, 0.9).geo == 0.0);
  CHECK(metrics_from(0.8, -0.1).geo == 0.0);
  CHECK(metrics_from(0.3, 0.5).geo == 0.0);
  for (double d : {0.1, 0.25, 0.4, 0.77}) CHECK(geo_metric(0.6, d) == doctest::Approx(geo_metric(0.6, 1.0 - d)));
  for (double x : {0.0, 0.123, 0.5, 0.61, 0.99, 1.0}) CHECK(metrics_from(x, 0.2).d == 2.0 * (x - 0.5));
}

TEST_CASE("criterion values") {
  const auto m = metrics_from(0.75, 0.4);
  CHECK(criterion_value(m, SelectionCriterion::AUC) == 0.75);
  CHECK(criterion_value(m, SelectionCriterion::R2) == 0.4);
  CHECK(criterion_value(m, SelectionCriterion::Geo) == m.geo);
  const auto no_r2 = metrics_from(0.75, std::numeric_limits<double>::quiet_NaN());
  CHECK(criterion_value(no_r2, SelectionCriterion::Geo) == -std::numeric_limits<double>::infinity());
  CHECK(criterion_value(no_r2, SelectionCriterion::AUC) == 0.75);
}

TEST_CASE("kfold with one spec selects it") {
  const auto ds = synthetic(60, 2, 7);
  LearnerSpec ridge;
  ridge.kind = LearnerKind::Ridge;
  for (auto c : {SelectionCriterion::R2, SelectionCriterion::AUC, SelectionCriterion::Geo}) {
    CHECK(kfold_select({ridge}, ds, 5, c, 1).best == 0);
  }
}

TEST_CASE("kfold prefers a dominating spec") {
  const auto ds = synthetic(300, 3, 8, 0.3);
  LearnerSpec weak = small_mlp(MlpMode::Joint, 1);
  weak.features = {2};
  LearnerSpec strong = small_mlp(MlpMode::Joint, 1);
  strong.epochs = 60;
  const auto res = kfold_select({weak, strong}, ds, 4, SelectionCriterion::Geo, 3);
  for (std::size_t f = 0; f < 4; ++f) CHECK(res.specs[1].per_fold[f].geo > res.specs[0].per_fold[f].geo);
  CHECK(res.best == 1);
}

TEST_CASE("kfold metrics can be recomputed from out-of-fold predictions") {
  const auto ds = synthetic(150, 3, 9);
  std::vector<LearnerSpec> specs;
  for (std::uint64_t s = 0; s < 3; ++s) specs.push_back(small_mlp(s % 2 ? MlpMode::Disjoint : MlpMode::Joint, s));
  LearnerSpec ridge;
  ridge.kind = LearnerKind::Ridge;
  ridge.features = {0};
  specs.push_back(ridge);
  LearnerSpec logit;
  logit.kind = LearnerKind::Logistic;
  specs.push_back(logit);
  const std::size_t folds = 5;
  const auto res = kfold_select(specs, ds, folds, SelectionCriterion::AUC, 12);

  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& ev = res.specs[s];
    REQUIRE_FALSE(ev.failed);
    double auc_sum = 0, r2_sum = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<double> score, label, pred, target;
      for (std::size_t i = 0; i < ds.n(); ++i) {
        if (res.fold_of_row[i] != f) continue;
        const auto r = static_cast<Eigen::Index>(i);
        label.push_back(ds.a()[r]);
        target.push_back(ds.y()[r]);
        if (ev.out_of_fold.ps) score.push_back((*ev.out_of_fold.ps)[r]);
        if (ev.out_of_fold.q1) pred.push_back(ds.a()[r] == 1.0 ? (*ev.out_of_fold.q1)[r] : (*ev.out_of_fold.q0)[r]);
      }
      if (ev.out_of_fold.ps) auc_sum += oracle::auc_pairs(score, label);
      if (ev.out_of_fold.q1) r2_sum += r_squared(pred, target);
    }
    if (ev.out_of_fold.ps) {
      CHECK(ev.mean.auc == doctest::Approx(auc_sum / folds).epsilon(1e-12));
      if (ev.score > best_score) {
        best_score = ev.score;
        best = s;
      }
    } else {
      CHECK(ev.score == -std::numeric_limits<double>::infinity());
    }
    if (ev.out_of_fold.q1) CHECK(ev.mean.r2 == doctest::Approx(r2_sum / folds).epsilon(1e-12));
  }
  CHECK(res.best == best);
  for (std::size_t f = 0; f < folds; ++f) {
    CHECK(std::count(res.fold_of_row.begin(), res.fold_of_row.end(), f) == 30);
  }
}

TEST_CASE("kfold marks failing specs and ties go to the first") {
  const auto ds = synthetic(40, 2, 10);
  LearnerSpec oracle_spec;
  oracle_spec.kind = LearnerKind::Oracle;
  LearnerSpec ridge;
  ridge.kind = LearnerKind::Ridge;
  const auto res = kfold_select({oracle_spec, ridge, ridge}, ds, 4, SelectionCriterion::R2, 0);
  CHECK(res.specs[0].failed);
  CHECK(res.best == 1);
  CHECK(code_of([&] { kfold_select({oracle_spec}, ds, 4, SelectionCriterion::R2, 0); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { kfold_select({ridge}, ds, 1, SelectionCriterion::R2, 0); }) == ErrorCode::InvalidInput);
}

TEST_CASE("spec validation and names") {
  LearnerSpec s;
  s.hidden_layers = {4, 0};
  CHECK(code_of([&] { s.validate(); }) == ErrorCode::InvalidInput);
  s = {};
  s.epochs = 0;
  CHECK(code_of([&] { s.validate(); }) == ErrorCode::InvalidInput);
  s = {};
  s.l1_strength = -1;
  CHECK(code_of([&] { s.validate(); }) == ErrorCode::InvalidInput);
  for (auto k : {LearnerKind::Logistic, LearnerKind::Ridge, LearnerKind::MLP, LearnerKind::Oracle}) {
    CHECK(parse_learner_kind(learner_kind_name(k)) == k);
  }
  for (auto m : {MlpMode::Joint, MlpMode::Disjoint}) CHECK(parse_mlp_mode(mlp_mode_name(m)) == m);
  for (auto c : {SelectionCriterion::R2, SelectionCriterion::AUC, SelectionCriterion::Geo}) {
    CHECK(parse_criterion(criterion_name(c)) == c);
  }
  CHECK(code_of([] { parse_learner_kind("forest"); }) == ErrorCode::InvalidInput);
}
