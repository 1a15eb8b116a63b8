#include "mrate/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "mrate/error.hpp"
#include "mrate/kernels.hpp"
#include "mrate/parallel.hpp"

namespace mrate {
namespace {

std::span<const double> span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void attach_interval(AteEstimate& est, double alpha) {
  est.variance = std::max(est.variance, 0.0);
  est.se = std::sqrt(est.variance);
  const double half = normal_quantile_two_sided(alpha) * est.se;
  est.ci_low = est.beta - half;
  est.ci_high = est.beta + half;
}

EstimateDiagnostics diagnostics_of(const ELCalibration& cal) {
  EstimateDiagnostics d;
  d.iterations_treated = cal.iterations_treated;
  d.iterations_control = cal.iterations_control;
  d.residual_treated = cal.residual_treated;
  d.residual_control = cal.residual_control;
  d.feasibility_margin = cal.feasibility_margin;
  d.dropped_columns = cal.dropped_columns;
  return d;
}

void check_calibration(const CausalDataset& ds, const ELCalibration& cal) {
  if (static_cast<std::size_t>(cal.u.size()) != ds.n() || static_cast<std::size_t>(cal.v.size()) != ds.n()) {
    fail(ErrorCode::DimensionMismatch, "calibration weights do not match the dataset");
  }
}

}  // namespace

void EstimatorConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
  if (!(ps_clip > 0.0 && ps_clip < 0.5)) fail(ErrorCode::InvalidInput, "ps_clip must lie in (0, 0.5)");
}

SolverOptions EstimatorConfig::solver_options() const {
  SolverOptions o;
  o.normalized_weights = normalized_weights;
  return o;
}

double normal_quantile_two_sided(double alpha) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

double mr_variance(const CausalDataset& ds, const ELCalibration& cal, double beta1, double beta0) {
  check_calibration(ds, cal);
  return kernels::weighted_sq_dev(span_of(cal.u), span_of(ds.y()), beta1) +
         kernels::weighted_sq_dev(span_of(cal.v), span_of(ds.y()), beta0);
}

AteEstimate mr_estimate(const CausalDataset& ds, const ELCalibration& cal, const EstimatorConfig& cfg) {
  cfg.validate();
  check_calibration(ds, cal);
  AteEstimate est;
  est.method = Method::MR;
  est.beta1 = kernels::dot(span_of(cal.u), span_of(ds.y()));
  est.beta0 = kernels::dot(span_of(cal.v), span_of(ds.y()));
  est.beta = est.beta1 - est.beta0;
  est.variance = mr_variance(ds, cal, est.beta1, est.beta0);
  est.diagnostics = diagnostics_of(cal);
  attach_interval(est, cfg.alpha);
  return est;
}

AteEstimate general_ee_estimate(const CausalDataset& ds, const ELCalibration& cal, const EstimatorConfig& cfg) {
  if (cfg.eta0 == 0.0 && cfg.eta1 == 0.0) {
    AteEstimate est = mr_estimate(ds, cal, cfg);
    est.method = Method::GeneralEE;
    return est;
  }
  cfg.validate();
  check_calibration(ds, cal);
  const double n = static_cast<double>(ds.n());
  // Normalized weights sum to one per arm by construction.
  const double s1 = cal.normalized ? 1.0 : kernels::sum(span_of(cal.u));
  const double s0 = cal.normalized ? 1.0 : kernels::sum(span_of(cal.v));

  AteEstimate est;
  est.method = Method::GeneralEE;
  est.beta1 = (kernels::dot(span_of(cal.u), span_of(ds.y())) - cfg.eta1 * (n - s1)) / s1;
  est.beta0 = (kernels::dot(span_of(cal.v), span_of(ds.y())) + cfg.eta0 * (n - s0)) / s0;
  est.beta = est.beta1 - est.beta0;

  // Sandwich: psi_i = phi1_i / s1 - phi0_i / s0, with u = 0 on controls, v = 0 on treated.
  double var = 0.0;
  for (Eigen::Index i = 0; i < ds.y().size(); ++i) {
    const double au = cal.u[i];
    const double bv = cal.v[i];
    const double phi1 = au * (ds.y()[i] - est.beta1) - cfg.eta1 * (1.0 - au);
    const double phi0 = bv * (ds.y()[i] - est.beta0) + cfg.eta0 * (1.0 - bv);
    const double psi = phi1 / s1 - phi0 / s0;
    var += psi * psi;
  }
  est.variance = var;
  est.diagnostics = diagnostics_of(cal);
  attach_interval(est, cfg.alpha);
  return est;
}

DoublyRobustEstimates dr_estimates(const CausalDataset& ds, const Vector& g, const Vector& q1, const Vector& q0,
                                   const EstimatorConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(ds.n());
  if (g.size() != n || q1.size() != n || q0.size() != n) {
    fail(ErrorCode::DimensionMismatch, "prediction columns must have one entry per row");
  }
  const Vector gc = g.cwiseMax(cfg.ps_clip).cwiseMin(1.0 - cfg.ps_clip);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(gc[i] > 0.0 && gc[i] < 1.0)) fail(ErrorCode::DegeneratePS, "clipped propensity score reached 0 or 1");
  }
  const Vector& y = ds.y();
  const Vector& a = ds.a();
  const double nd = static_cast<double>(n);

  // Inverse-probability weights per arm; zero on the other arm.
  Vector w1(n), w0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w1[i] = a[i] / gc[i];
    w0[i] = (1.0 - a[i]) / (1.0 - gc[i]);
  }
  const double sw1 = w1.sum();
  const double sw0 = w0.sum();

  DoublyRobustEstimates out;

  {
    AteEstimate& e = out.ipw;
    e.method = Method::IPW;
    e.beta1 = w1.dot(y) / nd;
    e.beta0 = w0.dot(y) / nd;
    e.beta = e.beta1 - e.beta0;
    double var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double phi = w1[i] * y[i] - w0[i] * y[i] - e.beta;
      var += phi * phi;
    }
    e.variance = var / (nd * nd);
    attach_interval(e, cfg.alpha);
  }
  {
    AteEstimate& e = out.nipw;
    e.method = Method::NIPW;
    const Vector u = w1 / sw1;
    const Vector v = w0 / sw0;
    e.beta1 = u.dot(y);
    e.beta0 = v.dot(y);
    e.beta = e.beta1 - e.beta0;
    e.variance = kernels::weighted_sq_dev(span_of(u), span_of(y), e.beta1) +
                 kernels::weighted_sq_dev(span_of(v), span_of(y), e.beta0);
    attach_interval(e, cfg.alpha);
  }
  const double mean_q1 = q1.sum() / nd;
  const double mean_q0 = q0.sum() / nd;
  {
    AteEstimate& e = out.aipw;
    e.method = Method::AIPW;
    double s1 = 0.0, s0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      s1 += w1[i] * (y[i] - q1[i]) + q1[i];
      s0 += w0[i] * (y[i] - q0[i]) + q0[i];
    }
    e.beta1 = s1 / nd;
    e.beta0 = s0 / nd;
    e.beta = e.beta1 - e.beta0;
    double var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double phi = w1[i] * (y[i] - q1[i]) - w0[i] * (y[i] - q0[i]) + q1[i] - q0[i] - e.beta;
      var += phi * phi;
    }
    e.variance = var / (nd * nd);
    attach_interval(e, cfg.alpha);
  }
  {
    AteEstimate& e = out.naipw;
    e.method = Method::NAIPW;
    double r1 = 0.0, r0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      r1 += w1[i] * (y[i] - q1[i]);
      r0 += w0[i] * (y[i] - q0[i]);
    }
    r1 /= sw1;
    r0 /= sw0;
    e.beta1 = r1 + mean_q1;
    e.beta0 = r0 + mean_q0;
    e.beta = e.beta1 - e.beta0;
    const double mean_diff = mean_q1 - mean_q0;
    double var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double psi = nd * w1[i] / sw1 * (y[i] - q1[i] - r1) - nd * w0[i] / sw0 * (y[i] - q0[i] - r0) +
                         (q1[i] - q0[i] - mean_diff);
      var += psi * psi;
    }
    e.variance = var / (nd * nd);
    attach_interval(e, cfg.alpha);
  }
  return out;
}

AteEstimate estimate_mr(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg) {
  const ConstraintMatrices cm = build_constraint_matrices(ds, pb);
  const ELCalibration cal = calibrate(ds, cm, cfg.solver_options());
  return mr_estimate(ds, cal, cfg);
}

bool bootstrap_replicate(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg,
                         std::uint64_t stream, double& beta) {
  auto rng = make_stream(cfg.seed, 0xB007u, stream);
  std::uniform_int_distribution<std::size_t> pick(0, ds.n() - 1);
  std::vector<std::size_t> rows(ds.n());
  for (auto& r : rows) r = pick(rng);
  try {
    const CausalDataset resampled = ds.select_rows(rows);
    const PredictionBundle pool = pb.k() + pb.l() > 0 ? pb.select_rows(rows) : PredictionBundle::empty(rows.size());
    beta = estimate_mr(resampled, pool, cfg).beta;
    return true;
  } catch (const Error&) {
    return false;
  }
}

BootstrapResult bootstrap_streams(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg,
                                  std::span<const std::uint64_t> streams) {
  cfg.validate();
  if (streams.size() < 2) fail(ErrorCode::InvalidInput, "bootstrap needs at least 2 replicates");
  std::vector<double> betas(streams.size(), 0.0);
  std::vector<char> ok(streams.size(), 0);
  parallel_for(streams.size(), cfg.threads,
               [&](std::size_t r) { ok[r] = bootstrap_replicate(ds, pb, cfg, streams[r], betas[r]) ? 1 : 0; });

  BootstrapResult res;
  res.replicates = streams.size();
  for (std::size_t r = 0; r < streams.size(); ++r) {
    if (ok[r]) {
      res.estimates.push_back(betas[r]);
    } else {
      ++res.failures;
    }
  }
  if (static_cast<double>(res.failures) > 0.2 * static_cast<double>(res.replicates) || res.estimates.size() < 2) {
    fail(ErrorCode::TooManyFailures,
         std::to_string(res.failures) + " of " + std::to_string(res.replicates) + " bootstrap replicates failed",
         {{"failures", res.failures}, {"replicates", res.replicates}});
  }
  res.se = sample_sd(res.estimates);
  return res;
}

BootstrapResult bootstrap_se(const CausalDataset& ds, const PredictionBundle& pb, const EstimatorConfig& cfg) {
  std::vector<std::uint64_t> streams(cfg.bootstrap_reps);
  for (std::size_t r = 0; r < streams.size(); ++r) streams[r] = r;
  return bootstrap_streams(ds, pb, cfg, streams);
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

}  // namespace mrate
