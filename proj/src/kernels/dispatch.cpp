#include <atomic>
#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mrate/kernels.hpp"

namespace mrate::kernels {

const KernelTable* avx2_table_unchecked() noexcept;

namespace {

bool cpu_has_avx2() noexcept {
#if defined(MRATE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick_default() noexcept {
  const KernelTable* best = avx2_table() != nullptr ? avx2_table() : &scalar_table();
  if (const char* env = std::getenv("MRATE_ISA")) {
    const std::string v(env);
    if (v == "scalar") return &scalar_table();
    if (v == "avx2" && avx2_table() != nullptr) return avx2_table();
  }
  return best;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> t{pick_default()};
  return t;
}

}  // namespace

const KernelTable* avx2_table() noexcept {
  static const bool ok = cpu_has_avx2();
  return ok ? avx2_table_unchecked() : nullptr;
}

bool isa_available(Isa isa) noexcept {
  return isa == Isa::Scalar || avx2_table() != nullptr;
}

const KernelTable& table(Isa isa) {
  if (isa == Isa::Scalar) return scalar_table();
  if (const KernelTable* t = avx2_table()) return *t;
  throw std::invalid_argument("AVX2 kernels are not available on this machine");
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

Isa active_isa() noexcept { return active().isa; }

void set_isa(Isa isa) { current().store(&table(isa), std::memory_order_release); }

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

double dot(std::span<const double> x, std::span<const double> y) {
  assert(x.size() == y.size());
  return active().dot(x.data(), y.data(), x.size());
}

double weighted_dot(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  assert(x.size() == y.size() && x.size() == w.size());
  return active().weighted_dot(x.data(), y.data(), w.data(), x.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

double min_value(std::span<const double> x) { return active().min_value(x.data(), x.size()); }

double weighted_sq_dev(std::span<const double> w, std::span<const double> y, double center) {
  assert(w.size() == y.size());
  return active().weighted_sq_dev(w.data(), y.data(), center, w.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void reciprocal(std::span<const double> x, std::span<double> out) {
  assert(x.size() == out.size());
  active().reciprocal(x.data(), out.data(), x.size());
}

void multiply(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  assert(x.size() == y.size() && x.size() == out.size());
  active().multiply(x.data(), y.data(), out.data(), x.size());
}

}  // namespace mrate::kernels
