#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mrate/data_model.hpp"
#include "mrate/error.hpp"

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

RawTable table(std::vector<std::vector<double>> rows) {
  RawTable t;
  t.columns = {"y", "a", "w1"};
  t.rows = std::move(rows);
  return t;
}

CausalDataset small_dataset(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Vector y(n), a(n);
  Matrix w(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    a[r] = i % 2 == 0 ? 1.0 : 0.0;
    y[r] = z(rng);
    w(r, 0) = z(rng);
    w(r, 1) = z(rng);
  }
  return CausalDataset(y, a, w);
}

}  // namespace

TEST_CASE("validate_dataset counts groups") {
  const auto ds = validate_dataset(table({{1, 1, 0}, {3, 1, 0}, {2, 0, 0}, {4, 0, 0}}));
  CHECK(ds.n() == 4);
  CHECK(ds.n1() == 2);
  CHECK(ds.n0() == 2);
  CHECK(ds.dropped_rows() == 0);
}

TEST_CASE("validate_dataset rejects an empty control group") {
  CHECK(code_of([] { validate_dataset(table({{1, 1, 0}, {2, 1, 0}, {3, 1, 0}})); }) == ErrorCode::EmptyGroup);
}

TEST_CASE("validate_dataset drops non-finite rows") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto ds = validate_dataset(table({{1, 1, 0}, {nan, 1, 0}, {3, 1, 1}, {2, 0, 0}, {4, 0, 2}}));
  CHECK(ds.n() == 4);
  CHECK(ds.dropped_rows() == 1);
  CHECK(ds.source_rows() == std::vector<std::size_t>{0, 2, 3, 4});
}

TEST_CASE("validate_dataset errors") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([] { validate_dataset(table({{1, 2, 0}, {2, 0, 0}})); }) == ErrorCode::NonBinaryTreatment);
  CHECK(code_of([&] { validate_dataset(table({{nan, 1, 0}, {2, nan, 0}})); }) == ErrorCode::NonFinite);
  RawTable no_a;
  no_a.columns = {"y", "w1"};
  no_a.rows = {{1, 0}, {2, 0}};
  CHECK(code_of([&] { validate_dataset(no_a); }) == ErrorCode::InvalidInput);
}

TEST_CASE("select_rows keeps source indices and guards groups") {
  std::mt19937_64 rng(3);
  const auto ds = small_dataset(6, rng);
  const std::vector<std::size_t> rows{0, 1, 1, 4};
  const auto sub = ds.select_rows(rows);
  CHECK(sub.n() == 4);
  CHECK(sub.source_rows() == std::vector<std::size_t>{0, 1, 1, 4});
  const std::vector<std::size_t> treated_only{0, 2, 4};
  CHECK(code_of([&] { ds.select_rows(treated_only); }) == ErrorCode::EmptyGroup);
}

TEST_CASE("prediction bundle invariants") {
  Matrix ps(2, 1);
  ps << 0.2, 1.0;
  CHECK(code_of([&] { PredictionBundle(ps, Matrix(2, 0), Matrix(2, 0)); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { PredictionBundle(Matrix(2, 0), Matrix::Zero(2, 2), Matrix::Zero(2, 1)); }) ==
        ErrorCode::DimensionMismatch);
  const auto pb = PredictionBundle::empty(3).with_ps(Vector::Constant(3, 0.4), "g").with_outcome(
      Vector::Ones(3), Vector::Zero(3), "q");
  CHECK(pb.k() == 1);
  CHECK(pb.l() == 1);
  CHECK(pb.labels() == std::vector<std::string>{"g", "q"});
}

TEST_CASE("constant propensity column is dropped") {
  std::mt19937_64 rng(1);
  const auto ds = small_dataset(4, rng);
  const auto pb = PredictionBundle::empty(4).with_ps(Vector::Constant(4, 0.5), "flat");
  const auto cm = build_constraint_matrices(ds, pb);
  CHECK(cm.c1().cols() == 0);
  CHECK(cm.treated.degenerate == 1);
  CHECK(cm.treated.kept.empty());
}

TEST_CASE("propensity columns are centered and sign-flipped") {
  std::mt19937_64 rng(1);
  const auto ds = small_dataset(4, rng);
  Vector g(4);
  g << 0.2, 0.4, 0.6, 0.8;
  const auto cm = build_constraint_matrices(ds, PredictionBundle::empty(4).with_ps(g, "g"));
  REQUIRE(cm.c1().cols() == 1);
  const double expected[] = {-0.3, -0.1, 0.1, 0.3};
  for (int i = 0; i < 4; ++i) {
    CHECK(cm.c1()(i, 0) == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(cm.c0()(i, 0) == -cm.c1()(i, 0));
  }
}

TEST_CASE("identical propensity columns are deduplicated") {
  std::mt19937_64 rng(1);
  const auto ds = small_dataset(4, rng);
  Vector g(4);
  g << 0.2, 0.4, 0.6, 0.8;
  const auto cm = build_constraint_matrices(ds, PredictionBundle::empty(4).with_ps(g, "a").with_ps(g, "b"));
  CHECK(cm.c1().cols() == 1);
  CHECK(cm.treated.duplicates == 1);
  CHECK(cm.control.duplicates == 1);
  CHECK(cm.treated.kept == std::vector<std::size_t>{0});
}

TEST_CASE("outcome columns use out0 on the control side") {
  std::mt19937_64 rng(2);
  const auto ds = small_dataset(5, rng);
  Vector q1(5), q0(5);
  q1 << 1, 2, 3, 4, 5;
  q0 << 0, 0, 1, 0, 4;
  const auto cm = build_constraint_matrices(ds, PredictionBundle::empty(5).with_outcome(q1, q0, "q"));
  for (int i = 0; i < 5; ++i) {
    CHECK(cm.c1()(i, 0) == doctest::Approx(q1[i] - 3.0));
    CHECK(cm.c0()(i, 0) == doctest::Approx(q0[i] - 1.0));
  }
}

TEST_CASE("constraint matrices: centering, sign relation and determinism on random pools") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 30 + static_cast<std::size_t>(rep);
    const auto ds = small_dataset(n, rng);
    const auto rows = static_cast<Eigen::Index>(n);
    Matrix ps(rows, 3), q1(rows, 2), q0(rows, 2);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index k = 0; k < 3; ++k) ps(i, k) = u(rng);
      for (Eigen::Index l = 0; l < 2; ++l) {
        q1(i, l) = 10.0 * z(rng);
        q0(i, l) = 10.0 * z(rng);
      }
    }
    const PredictionBundle pb(ps, q1, q0);
    const auto cm = build_constraint_matrices(ds, pb);
    const auto again = build_constraint_matrices(ds, pb);
    CHECK(cm.c1() == again.c1());
    CHECK(cm.c0() == again.c0());
    for (Eigen::Index j = 0; j < cm.c1().cols(); ++j) {
      const double m = cm.c1().col(j).mean();
      CHECK(std::abs(m) <= 1e-12 * (1.0 + cm.c1().col(j).cwiseAbs().maxCoeff()));
    }
    CHECK(cm.c0().leftCols(3) == -cm.c1().leftCols(3));
  }
}

TEST_CASE("method names round-trip") {
  for (auto m : {Method::MR, Method::IPW, Method::NIPW, Method::AIPW, Method::NAIPW, Method::GeneralEE}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK(code_of([] { parse_method("TMLE"); }) == ErrorCode::InvalidInput);
}
