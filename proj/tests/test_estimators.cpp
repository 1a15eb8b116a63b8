#include <doctest.h>

#include <cmath>
#include <random>

#include "mrate/error.hpp"
#include "mrate/estimators.hpp"
#include "oracles.hpp"

using namespace mrate;

namespace {

CausalDataset four_rows() {
  Vector y(4), a(4);
  y << 1, 3, 2, 4;
  a << 1, 1, 0, 0;
  return CausalDataset(y, a, Matrix::Zero(4, 1));
}

struct Instance {
  CausalDataset ds;
  PredictionBundle pb;
};

Instance random_instance(std::size_t n, int k, int l, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix w(rows, 2);
  Vector a(rows), y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    w(i, 0) = z(rng);
    w(i, 1) = z(rng);
    a[i] = u(rng) < 1.0 / (1.0 + std::exp(-0.6 * w(i, 0))) ? 1.0 : 0.0;
    y[i] = 2.0 + a[i] + w(i, 0) - 0.5 * w(i, 1) + z(rng);
  }
  a[0] = 1.0;
  a[1] = 0.0;
  Matrix ps(rows, k), q1(rows, l), q0(rows, l);
  for (int j = 0; j < k; ++j) {
    const double b = 0.6 + 0.2 * z(rng);
    for (Eigen::Index i = 0; i < rows; ++i) ps(i, j) = 1.0 / (1.0 + std::exp(-b * w(i, j % 2)));
  }
  for (int j = 0; j < l; ++j) {
    const double c = 1.0 + 0.2 * z(rng);
    for (Eigen::Index i = 0; i < rows; ++i) {
      q0(i, j) = 2.0 + c * w(i, 0);
      q1(i, j) = q0(i, j) + 1.0;
    }
  }
  return {CausalDataset(y, a, w), PredictionBundle(ps, q1, q0)};
}

ELCalibration calibrated(const Instance& inst) {
  return calibrate(inst.ds, build_constraint_matrices(inst.ds, inst.pb));
}

}  // namespace

TEST_CASE("empty pool gives the difference of group means") {
  const auto ds = four_rows();
  const auto est = estimate_mr(ds, PredictionBundle::empty(4));
  CHECK(est.beta1 == 2.0);
  CHECK(est.beta0 == 3.0);
  CHECK(est.beta == -1.0);
  CHECK(est.variance == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(est.se == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(est.ci_low == doctest::Approx(-1.0 - 1.959963984540054).epsilon(1e-15));
  CHECK(est.ci_high == doctest::Approx(-1.0 + 1.959963984540054).epsilon(1e-15));
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile_two_sided(0.05) == 1.959963984540054);
  CHECK(normal_quantile_two_sided(0.10) == doctest::Approx(1.6448536269514722).epsilon(1e-14));
  CHECK(normal_quantile_two_sided(0.01) == doctest::Approx(2.5758293035489004).epsilon(1e-14));
}

TEST_CASE("constant outcome gives zero effect and zero variance") {
  std::mt19937_64 rng(1);
  const auto inst = random_instance(80, 2, 2, rng);
  const auto ds = inst.ds.with_outcome(Vector::Constant(80, 4.5));
  const auto est = mr_estimate(ds, calibrated(inst));
  CHECK(std::abs(est.beta) <= 1e-12);
  CHECK(est.variance <= 1e-24);
  CHECK(bootstrap_se(ds, inst.pb, EstimatorConfig{.bootstrap_reps = 20}).se <= 1e-12);
}

TEST_CASE("n = 6 instance matches a hand evaluation with the bisection multiplier") {
  Vector y(6), a(6), g(6);
  y << 1.5, 2.0, 3.5, 0.5, 1.0, 2.5;
  a << 1, 1, 1, 0, 0, 0;
  g << 0.7, 0.4, 0.6, 0.3, 0.5, 0.2;
  const CausalDataset ds(y, a, Matrix::Zero(6, 1));
  const auto est = estimate_mr(ds, PredictionBundle::empty(6).with_ps(g, "g"));
  const double gbar = g.mean();
  std::vector<double> c1{g[0] - gbar, g[1] - gbar, g[2] - gbar};
  std::vector<double> c0{-(g[3] - gbar), -(g[4] - gbar), -(g[5] - gbar)};
  const auto u = oracle::weights_1d(c1, oracle::bisection_gamma(c1));
  const auto v = oracle::weights_1d(c0, oracle::bisection_gamma(c0));
  const double b1 = u[0] * y[0] + u[1] * y[1] + u[2] * y[2];
  const double b0 = v[0] * y[3] + v[1] * y[4] + v[2] * y[5];
  CHECK(std::abs(est.beta - (b1 - b0)) <= 1e-8);
}

TEST_CASE("variance matches a row-by-row re-summation") {
  std::mt19937_64 rng(2);
  const auto inst = random_instance(50, 2, 2, rng);
  const auto cal = calibrated(inst);
  const auto est = mr_estimate(inst.ds, cal);
  const double ref = oracle::mr_variance_rows(inst.ds.y(), inst.ds.a(), cal.u, cal.v, est.beta1, est.beta0);
  CHECK(std::abs(est.variance - ref) <= 1e-12);
  CHECK(est.ci_low <= est.beta);
  CHECK(est.ci_high >= est.beta);
}

TEST_CASE("general class with zero eta is MR") {
  std::mt19937_64 rng(3);
  const auto inst = random_instance(60, 2, 1, rng);
  const auto cal = calibrated(inst);
  const auto mr = mr_estimate(inst.ds, cal);
  const auto ee = general_ee_estimate(inst.ds, cal);
  CHECK(ee.method == Method::GeneralEE);
  CHECK(ee.beta == mr.beta);
  CHECK(ee.variance == mr.variance);
}

TEST_CASE("general class closed form with eta1 = 1") {
  const auto ds = four_rows();
  const auto cal = calibrate(ds, build_constraint_matrices(ds, PredictionBundle::empty(4)));
  const auto est = general_ee_estimate(ds, cal, EstimatorConfig{.eta1 = 1.0});
  CHECK(est.beta1 == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(est.beta0 == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("general class matches a root-finder on the estimating equation") {
  std::mt19937_64 rng(4);
  const auto inst = random_instance(70, 2, 2, rng);
  for (bool normalized : {true, false}) {
    SolverOptions opts;
    opts.normalized_weights = normalized;
    const auto cal = calibrate(inst.ds, build_constraint_matrices(inst.ds, inst.pb), opts);
    EstimatorConfig cfg{.eta0 = -0.3, .eta1 = 0.5};
    const auto est = general_ee_estimate(inst.ds, cal, cfg);
    const auto& y = inst.ds.y();
    auto ee1 = [&](double b) {
      double s = 0;
      for (Eigen::Index i = 0; i < y.size(); ++i) s += cal.u[i] * (y[i] - b) - cfg.eta1 * (1.0 - cal.u[i]);
      return s;
    };
    auto ee0 = [&](double b) {
      double s = 0;
      for (Eigen::Index i = 0; i < y.size(); ++i) s += cal.v[i] * (y[i] - b) + cfg.eta0 * (1.0 - cal.v[i]);
      return s;
    };
    CHECK(std::abs(est.beta1 - oracle::bisect(ee1, -1e4, 1e4)) <= 1e-9);
    CHECK(std::abs(est.beta0 - oracle::bisect(ee0, -1e4, 1e4)) <= 1e-9);
  }
}

TEST_CASE("AIPW symmetric cancellation") {
  Vector y(2), a(2);
  y << 1, 1;
  a << 1, 0;
  const CausalDataset ds(y, a, Matrix::Zero(2, 1));
  const auto dr = dr_estimates(ds, Vector::Constant(2, 0.5), Vector::Zero(2), Vector::Zero(2));
  CHECK(dr.aipw.beta == 0.0);
  CHECK(dr.ipw.beta == 0.0);
}

TEST_CASE("AIPW with interpolating outcome models") {
  std::mt19937_64 rng(5);
  const auto inst = random_instance(40, 1, 1, rng);
  const auto& y = inst.ds.y();
  Vector q1 = inst.pb.out1().col(0), q0 = inst.pb.out0().col(0);
  for (Eigen::Index i = 0; i < y.size(); ++i) (inst.ds.a()[i] == 1.0 ? q1[i] : q0[i]) = y[i];
  const auto dr = dr_estimates(inst.ds, inst.pb.ps().col(0), q1, q0);
  CHECK(dr.aipw.beta == doctest::Approx((q1 - q0).mean()).epsilon(1e-14));
  CHECK(dr.naipw.beta == doctest::Approx((q1 - q0).mean()).epsilon(1e-14));
}

TEST_CASE("AIPW family against per-row oracles") {
  std::mt19937_64 rng(6);
  const auto inst = random_instance(100, 1, 1, rng);
  const auto& y = inst.ds.y();
  const auto& a = inst.ds.a();
  const Vector g = inst.pb.ps().col(0);
  const Vector q1 = inst.pb.out1().col(0), q0 = inst.pb.out0().col(0);
  const auto dr = dr_estimates(inst.ds, g, q1, q0, EstimatorConfig{.ps_clip = 0.001});
  CHECK(std::abs(dr.aipw.beta - oracle::aipw_rows(y, a, g, q1, q0)) <= 1e-12);

  long double ipw = 0, t1 = 0, s1 = 0, t0 = 0, s0 = 0, r1 = 0, r0 = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (a[i] == 1.0) {
      ipw += y[i] / g[i];
      t1 += y[i] / g[i];
      s1 += 1.0 / g[i];
      r1 += (y[i] - q1[i]) / g[i];
    } else {
      ipw -= y[i] / (1.0 - g[i]);
      t0 += y[i] / (1.0 - g[i]);
      s0 += 1.0 / (1.0 - g[i]);
      r0 += (y[i] - q0[i]) / (1.0 - g[i]);
    }
  }
  CHECK(std::abs(dr.ipw.beta - static_cast<double>(ipw / y.size())) <= 1e-12);
  CHECK(std::abs(dr.nipw.beta - static_cast<double>(t1 / s1 - t0 / s0)) <= 1e-12);
  CHECK(std::abs(dr.naipw.beta - static_cast<double>(r1 / s1 - r0 / s0) - (q1 - q0).mean()) <= 1e-12);
  for (const auto* e : {&dr.ipw, &dr.nipw, &dr.aipw, &dr.naipw}) {
    CHECK(e->variance >= 0.0);
    CHECK(e->ci_low <= e->beta);
    CHECK(e->ci_high >= e->beta);
  }
}

TEST_CASE("propensity clipping") {
  Vector y(4), a(4), g(4);
  y << 1, 2, 3, 4;
  a << 1, 1, 0, 0;
  g << 0.0, 0.5, 0.5, 1.0;
  const CausalDataset ds(y, a, Matrix::Zero(4, 1));
  Vector gc = g;
  gc[0] = 0.01;
  gc[3] = 0.99;
  const auto clipped = dr_estimates(ds, g, Vector::Zero(4), Vector::Zero(4));
  const auto manual = dr_estimates(ds, gc, Vector::Zero(4), Vector::Zero(4));
  CHECK(clipped.ipw.beta == manual.ipw.beta);
  CHECK_THROWS_AS(dr_estimates(ds, g, Vector::Zero(4), Vector::Zero(4), EstimatorConfig{.ps_clip = 0.7}), Error);
  CHECK_THROWS_AS(dr_estimates(ds, g, Vector::Zero(3), Vector::Zero(4)), Error);
}

TEST_CASE("location and scale behaviour") {
  std::mt19937_64 rng(7);
  const auto inst = random_instance(90, 3, 2, rng);
  const auto cal = calibrated(inst);
  const auto base = mr_estimate(inst.ds, cal);
  const auto shifted = mr_estimate(inst.ds.with_outcome(inst.ds.y() + Vector::Constant(90, 5.0)), cal);
  CHECK(shifted.beta1 - base.beta1 == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(shifted.beta0 - base.beta0 == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(std::abs(shifted.beta - base.beta) <= 1e-12);
  const auto scaled = mr_estimate(inst.ds.with_outcome(-3.0 * inst.ds.y()), cal);
  CHECK(scaled.beta == doctest::Approx(-3.0 * base.beta).epsilon(1e-12));
  CHECK(scaled.variance == doctest::Approx(9.0 * base.variance).epsilon(1e-12));
}

TEST_CASE("interpolating outcome model pins the treated mean") {
  std::mt19937_64 rng(8);
  auto inst = random_instance(120, 2, 1, rng);
  Vector q1 = inst.pb.out1().col(0);
  for (Eigen::Index i = 0; i < q1.size(); ++i) {
    if (inst.ds.a()[i] == 1.0) q1[i] = inst.ds.y()[i];
  }
  const auto pb = inst.pb.with_outcome(q1, inst.pb.out0().col(0), "exact");
  const auto est = estimate_mr(inst.ds, pb);
  CHECK(std::abs(est.beta1 - q1.mean()) <= 1e-7);
}

TEST_CASE("bootstrap with identical replicate streams gives zero SE") {
  std::mt19937_64 rng(9);
  const auto inst = random_instance(60, 1, 1, rng);
  const std::uint64_t streams[] = {5, 5};
  const auto res = bootstrap_streams(inst.ds, inst.pb, EstimatorConfig{}, streams);
  CHECK(res.se == 0.0);
  CHECK(res.replicates == 2);
}

TEST_CASE("bootstrap of the empty pool matches a difference-of-means bootstrap") {
  std::mt19937_64 rng(10);
  const auto inst = random_instance(200, 0, 0, rng);
  EstimatorConfig cfg;
  cfg.bootstrap_reps = 2000;
  cfg.seed = 17;
  cfg.threads = 4;
  const auto res = bootstrap_se(inst.ds, PredictionBundle::empty(200), cfg);

  std::mt19937_64 other(12345);
  std::uniform_int_distribution<int> pick(0, 199);
  std::vector<double> betas;
  for (int r = 0; r < 2000; ++r) {
    double s1 = 0, s0 = 0;
    int n1 = 0, n0 = 0;
    for (int i = 0; i < 200; ++i) {
      const int j = pick(other);
      if (inst.ds.a()[j] == 1.0) {
        s1 += inst.ds.y()[j];
        ++n1;
      } else {
        s0 += inst.ds.y()[j];
        ++n0;
      }
    }
    betas.push_back(s1 / n1 - s0 / n0);
  }
  const double ref = sample_sd(betas);
  CHECK(std::abs(res.se - ref) <= 0.1 * ref);
}

TEST_CASE("bootstrap is independent of thread count") {
  std::mt19937_64 rng(11);
  const auto inst = random_instance(80, 2, 2, rng);
  EstimatorConfig cfg{.bootstrap_reps = 40, .seed = 3};
  const auto one = bootstrap_se(inst.ds, inst.pb, cfg);
  cfg.threads = 4;
  const auto four = bootstrap_se(inst.ds, inst.pb, cfg);
  CHECK(one.estimates == four.estimates);
  CHECK(one.se == four.se);
}

TEST_CASE("bootstrap failure accounting") {
  std::mt19937_64 rng(12);
  const auto inst = random_instance(50, 1, 0, rng);
  CHECK_THROWS_AS(bootstrap_se(inst.ds, inst.pb, EstimatorConfig{.bootstrap_reps = 1}), Error);
  // Four rows with a single control: most resamples lose the control group.
  Vector y(4), a(4);
  y << 1, 2, 3, 4;
  a << 1, 1, 1, 0;
  const CausalDataset tiny(y, a, Matrix::Zero(4, 1));
  try {
    bootstrap_se(tiny, PredictionBundle::empty(4), EstimatorConfig{.bootstrap_reps = 50});
    FAIL("expected TooManyFailures");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooManyFailures);
  }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(EstimatorConfig{.alpha = 0.0}.validate(), Error);
  CHECK_THROWS_AS(EstimatorConfig{.alpha = 1.0}.validate(), Error);
  CHECK_THROWS_AS(EstimatorConfig{.ps_clip = 0.5}.validate(), Error);
  CHECK_NOTHROW(EstimatorConfig{}.validate());
}
