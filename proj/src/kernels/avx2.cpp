// Compiled with -mavx2 -mfma -ffp-contract=off; only reached through the
// dispatch table after a CPUID check.
#include "mrate/kernels.hpp"

#if defined(MRATE_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>
#include <limits>

namespace mrate::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(s) + _mm_cvtsd_f64(_mm_unpackhi_pd(s, s));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double weighted_dot_avx2(const double* x, const double* y, const double* w, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d wx0 = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(x + i));
    const __m256d wx1 = _mm256_mul_pd(_mm256_loadu_pd(w + i + 4), _mm256_loadu_pd(x + i + 4));
    acc0 = _mm256_fmadd_pd(wx0, _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(wx1, _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d wx = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(x + i));
    acc0 = _mm256_fmadd_pd(wx, _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += w[i] * x[i] * y[i];
  return acc;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

double min_value_avx2(const double* x, std::size_t n) {
  double m = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d acc = _mm256_set1_pd(m);
    for (; i + 4 <= n; i += 4) acc = _mm256_min_pd(acc, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    for (double lane : lanes) m = lane < m ? lane : m;
  }
  for (; i < n; ++i) m = x[i] < m ? x[i] : m;
  return m;
}

double weighted_sq_dev_avx2(const double* w, const double* y, double center, std::size_t n) {
  const __m256d c = _mm256_set1_pd(center);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d r0 = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_sub_pd(_mm256_loadu_pd(y + i), c));
    const __m256d r1 =
        _mm256_mul_pd(_mm256_loadu_pd(w + i + 4), _mm256_sub_pd(_mm256_loadu_pd(y + i + 4), c));
    acc0 = _mm256_fmadd_pd(r0, r0, acc0);
    acc1 = _mm256_fmadd_pd(r1, r1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_sub_pd(_mm256_loadu_pd(y + i), c));
    acc0 = _mm256_fmadd_pd(r, r, acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double r = w[i] * (y[i] - center);
    acc += r * r;
  }
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(a, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void reciprocal_avx2(const double* x, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_div_pd(one, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = 1.0 / x[i];
}

void multiply_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void relu_avx2(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // keep v where v > 0, matching the scalar select (maps -0 and NaN to +0)
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(x + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* activation, double* grad, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(activation + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_and_pd(mask, _mm256_loadu_pd(grad + i)));
  }
  for (; i < n; ++i) grad[i] = activation[i] > 0.0 ? grad[i] : 0.0;
}

void l1_subgradient_avx2(const double* param, double* grad, double strength, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d pos = _mm256_set1_pd(strength);
  const __m256d neg = _mm256_set1_pd(-strength);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_loadu_pd(param + i);
    const __m256d gt = _mm256_cmp_pd(p, zero, _CMP_GT_OQ);
    const __m256d lt = _mm256_cmp_pd(p, zero, _CMP_LT_OQ);
    const __m256d s = _mm256_or_pd(_mm256_and_pd(gt, pos), _mm256_and_pd(lt, neg));
    _mm256_storeu_pd(grad + i, _mm256_add_pd(_mm256_loadu_pd(grad + i), s));
  }
  for (; i < n; ++i) {
    const double s = param[i] > 0.0 ? strength : (param[i] < 0.0 ? -strength : 0.0);
    grad[i] = grad[i] + s;
  }
}

void adam_update_avx2(double* param, const double* grad, double* m, double* v, std::size_t n,
                      const AdamStep& step) {
  const double one_minus_b1 = 1.0 - step.beta1;
  const double one_minus_b2 = 1.0 - step.beta2;
  const __m256d b1 = _mm256_set1_pd(step.beta1);
  const __m256d b2 = _mm256_set1_pd(step.beta2);
  const __m256d omb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d omb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d bc1 = _mm256_set1_pd(step.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(step.bias_correction2);
  const __m256d lr = _mm256_set1_pd(step.learning_rate);
  const __m256d eps = _mm256_set1_pd(step.epsilon);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), upd));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = step.beta1 * m[i] + one_minus_b1 * g;
    v[i] = step.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / step.bias_correction1;
    const double v_hat = v[i] / step.bias_correction2;
    param[i] = param[i] - step.learning_rate * m_hat / (std::sqrt(v_hat) + step.epsilon);
  }
}

}  // namespace

const KernelTable* avx2_table_unchecked() noexcept {
  static const KernelTable t{
      Isa::Avx2,          dot_avx2,          weighted_dot_avx2,   sum_avx2,
      min_value_avx2,     weighted_sq_dev_avx2, axpy_avx2,        reciprocal_avx2,
      multiply_avx2,      relu_avx2,         relu_backward_avx2,  l1_subgradient_avx2,
      adam_update_avx2,
  };
  return &t;
}

}  // namespace mrate::kernels

#else

namespace mrate::kernels {
const KernelTable* avx2_table_unchecked() noexcept { return nullptr; }
}  // namespace mrate::kernels

#endif
