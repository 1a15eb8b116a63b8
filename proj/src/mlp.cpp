#include "mrate/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mrate/error.hpp"
#include "mrate/kernels.hpp"
#include "mrate/parallel.hpp"

namespace mrate {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Mlp::Mlp(MlpArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  if (arch_.inputs == 0) fail(ErrorCode::InvalidInput, "mlp needs at least one input");
  if (!arch_.ps_head && !arch_.outcome_head) fail(ErrorCode::InvalidInput, "mlp needs at least one head");
  for (auto w : arch_.hidden) {
    if (w == 0) fail(ErrorCode::InvalidInput, "hidden widths must be >= 1");
  }

  std::size_t offset = 0;
  auto add = [&](std::size_t in, std::size_t out) {
    Layer l{in, out, offset, offset + in * out};
    offset += in * out + out;
    return l;
  };
  std::size_t width = arch_.inputs;
  for (auto h : arch_.hidden) {
    trunk_.push_back(add(width, h));
    width = h;
  }
  if (arch_.ps_head) ps_head_ = add(width, 1);
  if (arch_.outcome_head) outcome_head_ = add(width + 1, 1);
  params_.assign(offset, 0.0);

  auto rng = make_stream(seed, 0x1417);
  auto init = [&](const Layer& l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < l.in * l.out; ++i) params_[l.weights + i] = dist(rng);
  };
  for (const auto& l : trunk_) init(l);
  if (arch_.ps_head) init(ps_head_);
  if (arch_.outcome_head) init(outcome_head_);
}

Mlp::Output Mlp::forward(const double* input, double a) const {
  Output out;
  const auto& k = kernels::active();
  std::vector<double> cur(input, input + arch_.inputs);
  for (const auto& l : trunk_) {
    std::vector<double> next(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      next[o] = k.dot(&params_[l.weights + o * l.in], cur.data(), l.in) + params_[l.bias + o];
    }
    k.relu(next.data(), next.size());
    cur.swap(next);
  }
  if (arch_.ps_head) {
    out.ps_logit = k.dot(&params_[ps_head_.weights], cur.data(), cur.size()) + params_[ps_head_.bias];
  }
  if (arch_.outcome_head) {
    const double* wo = &params_[outcome_head_.weights];
    out.outcome = k.dot(wo, cur.data(), cur.size()) + wo[cur.size()] * a + params_[outcome_head_.bias];
  }
  return out;
}

double Mlp::sample_pass(const double* input, double a, double y, double scale, std::vector<double>* grad,
                        std::vector<std::vector<double>>& acts) const {
  const auto& k = kernels::active();
  acts.resize(trunk_.size() + 1);
  acts[0].assign(input, input + arch_.inputs);
  for (std::size_t li = 0; li < trunk_.size(); ++li) {
    const auto& l = trunk_[li];
    auto& next = acts[li + 1];
    next.resize(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      next[o] = k.dot(&params_[l.weights + o * l.in], acts[li].data(), l.in) + params_[l.bias + o];
    }
    k.relu(next.data(), next.size());
  }
  const auto& h = acts.back();
  const std::size_t width = h.size();

  double loss = 0.0;
  double d_ps = 0.0;
  double d_out = 0.0;
  if (arch_.ps_head) {
    const double z = k.dot(&params_[ps_head_.weights], h.data(), width) + params_[ps_head_.bias];
    loss += softplus(z) - a * z;
    d_ps = scale * (sigmoid(z) - a);
  }
  if (arch_.outcome_head) {
    const double* wo = &params_[outcome_head_.weights];
    const double o = k.dot(wo, h.data(), width) + wo[width] * a + params_[outcome_head_.bias];
    loss += 0.5 * (o - y) * (o - y);
    d_out = scale * (o - y);
  }
  if (grad == nullptr) return loss;

  auto& g = *grad;
  std::vector<double> delta(width, 0.0);
  if (arch_.ps_head) {
    k.axpy(d_ps, h.data(), &g[ps_head_.weights], width);
    g[ps_head_.bias] += d_ps;
    k.axpy(d_ps, &params_[ps_head_.weights], delta.data(), width);
  }
  if (arch_.outcome_head) {
    k.axpy(d_out, h.data(), &g[outcome_head_.weights], width);
    g[outcome_head_.weights + width] += d_out * a;
    g[outcome_head_.bias] += d_out;
    k.axpy(d_out, &params_[outcome_head_.weights], delta.data(), width);
  }
  for (std::size_t li = trunk_.size(); li-- > 0;) {
    const auto& l = trunk_[li];
    k.relu_backward(acts[li + 1].data(), delta.data(), l.out);
    std::vector<double> prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      if (delta[o] == 0.0) continue;
      k.axpy(delta[o], acts[li].data(), &g[l.weights + o * l.in], l.in);
      g[l.bias + o] += delta[o];
      if (li > 0) k.axpy(delta[o], &params_[l.weights + o * l.in], prev.data(), l.in);
    }
    delta.swap(prev);
  }
  return loss;
}

double Mlp::loss(const RowMatrix& x, std::span<const double> a, std::span<const double> y,
                 std::span<const std::size_t> batch, double l1) const {
  std::vector<std::vector<double>> acts;
  double total = 0.0;
  for (auto i : batch) total += sample_pass(x.row(static_cast<Eigen::Index>(i)).data(), a[i], y[i], 0.0, nullptr, acts);
  total /= static_cast<double>(batch.size());
  if (l1 > 0.0) {
    double penalty = 0.0;
    auto add = [&](const Layer& l) {
      for (std::size_t j = 0; j < l.in * l.out; ++j) penalty += std::abs(params_[l.weights + j]);
    };
    for (const auto& l : trunk_) add(l);
    if (arch_.ps_head) add(ps_head_);
    if (arch_.outcome_head) add(outcome_head_);
    total += l1 * penalty;
  }
  return total;
}

double Mlp::gradient(const RowMatrix& x, std::span<const double> a, std::span<const double> y,
                     std::span<const std::size_t> batch, double l1, std::vector<double>& grad) const {
  grad.assign(params_.size(), 0.0);
  std::vector<std::vector<double>> acts;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (auto i : batch) total += sample_pass(x.row(static_cast<Eigen::Index>(i)).data(), a[i], y[i], scale, &grad, acts);
  total *= scale;
  if (l1 > 0.0) {
    const auto& k = kernels::active();
    double penalty = 0.0;
    auto add = [&](const Layer& l) {
      for (std::size_t j = 0; j < l.in * l.out; ++j) penalty += std::abs(params_[l.weights + j]);
      k.l1_subgradient(&params_[l.weights], &grad[l.weights], l1, l.in * l.out);
    };
    for (const auto& l : trunk_) add(l);
    if (arch_.ps_head) add(ps_head_);
    if (arch_.outcome_head) add(outcome_head_);
    total += l1 * penalty;
  }
  return total;
}

void Mlp::train(const RowMatrix& x, std::span<const double> a, std::span<const double> y, std::size_t epochs,
                std::size_t batch_size, double l1, const AdamOptions& adam, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n == 0) fail(ErrorCode::InvalidInput, "mlp training needs at least one row");
  if (static_cast<std::size_t>(x.cols()) != arch_.inputs || a.size() != n || y.size() != n) {
    fail(ErrorCode::DimensionMismatch, "mlp training inputs have inconsistent shapes");
  }
  batch_size = std::clamp<std::size_t>(batch_size, 1, n);
  const auto& k = kernels::active();
  std::vector<double> m(params_.size(), 0.0);
  std::vector<double> v(params_.size(), 0.0);
  std::vector<double> grad;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, 0xADA0);
  double b1t = 1.0;
  double b2t = 1.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t len = std::min(batch_size, n - start);
      gradient(x, a, y, std::span<const std::size_t>(order.data() + start, len), l1, grad);
      b1t *= adam.beta1;
      b2t *= adam.beta2;
      const kernels::AdamStep step{adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon, 1.0 - b1t, 1.0 - b2t};
      k.adam_update(params_.data(), grad.data(), m.data(), v.data(), params_.size(), step);
    }
  }
}

}  // namespace mrate
