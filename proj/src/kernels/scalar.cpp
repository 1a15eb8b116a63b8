#include "mrate/kernels.hpp"

#include <cmath>
#include <limits>

namespace mrate::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double weighted_dot_scalar(const double* x, const double* y, const double* w, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += w[i] * x[i] * y[i];
  return acc;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double min_value_scalar(const double* x, std::size_t n) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] < m ? x[i] : m;
  return m;
}

double weighted_sq_dev_scalar(const double* w, const double* y, double center, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = w[i] * (y[i] - center);
    acc += r * r;
  }
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void reciprocal_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / x[i];
}

void multiply_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void relu_scalar(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* activation, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] = activation[i] > 0.0 ? grad[i] : 0.0;
}

void l1_subgradient_scalar(const double* param, double* grad, double strength, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double s = param[i] > 0.0 ? strength : (param[i] < 0.0 ? -strength : 0.0);
    grad[i] = grad[i] + s;
  }
}

void adam_update_scalar(double* param, const double* grad, double* m, double* v, std::size_t n,
                        const AdamStep& step) {
  const double one_minus_b1 = 1.0 - step.beta1;
  const double one_minus_b2 = 1.0 - step.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = step.beta1 * m[i] + one_minus_b1 * g;
    v[i] = step.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / step.bias_correction1;
    const double v_hat = v[i] / step.bias_correction2;
    param[i] = param[i] - step.learning_rate * m_hat / (std::sqrt(v_hat) + step.epsilon);
  }
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable t{
      Isa::Scalar,          dot_scalar,          weighted_dot_scalar,   sum_scalar,
      min_value_scalar,     weighted_sq_dev_scalar, axpy_scalar,       reciprocal_scalar,
      multiply_scalar,      relu_scalar,         relu_backward_scalar,  l1_subgradient_scalar,
      adam_update_scalar,
  };
  return t;
}

}  // namespace mrate::kernels
