#pragma once

// Data-parallel inner loops shared by the calibration solver, the estimators
// and the MLP trainer. Every kernel has a scalar reference implementation and
// an AVX2 variant; the active table is chosen once at startup from CPUID and
// can be pinned with set_isa() or MRATE_ISA=scalar|avx2.
//
// Elementwise kernels are bit-identical across ISAs (no FMA contraction, same
// operation order). Reductions use four-way accumulators in the AVX2 path, so
// they agree with the scalar path to rounding only.

#include <cstddef>
#include <span>
#include <string_view>

namespace mrate::kernels {

enum class Isa { Scalar, Avx2 };

struct AdamStep {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i w[i] * x[i] * y[i]
  double (*weighted_dot)(const double* x, const double* y, const double* w, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // min_i x[i]; +inf for n == 0
  double (*min_value)(const double* x, std::size_t n);
  // sum_i w[i]^2 * (y[i] - center)^2
  double (*weighted_sq_dev)(const double* w, const double* y, double center, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = 1 / x[i]
  void (*reciprocal)(const double* x, double* out, std::size_t n);
  // out[i] = x[i] * y[i]
  void (*multiply)(const double* x, const double* y, double* out, std::size_t n);
  // x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);
  // grad[i] = activation[i] > 0 ? grad[i] : 0
  void (*relu_backward)(const double* activation, double* grad, std::size_t n);
  // grad[i] += strength * sign(param[i])
  void (*l1_subgradient)(const double* param, double* grad, double strength, std::size_t n);
  void (*adam_update)(double* param, const double* grad, double* m, double* v, std::size_t n,
                      const AdamStep& step);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table() noexcept;

bool isa_available(Isa isa) noexcept;
const KernelTable& table(Isa isa);
const KernelTable& active() noexcept;
Isa active_isa() noexcept;
// Throws std::invalid_argument if the ISA is unavailable on this machine.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;

// Span front-ends over the active table.
double dot(std::span<const double> x, std::span<const double> y);
double weighted_dot(std::span<const double> x, std::span<const double> y, std::span<const double> w);
double sum(std::span<const double> x);
double min_value(std::span<const double> x);
double weighted_sq_dev(std::span<const double> w, std::span<const double> y, double center);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void reciprocal(std::span<const double> x, std::span<double> out);
void multiply(std::span<const double> x, std::span<const double> y, std::span<double> out);

}  // namespace mrate::kernels
