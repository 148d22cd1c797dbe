#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dof/simd/kernels.hpp"

namespace dof::simd {

namespace {

Isa detect_default() {
  if (const char* env = std::getenv("DOF_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<int>& current() {
  static std::atomic<int> isa{static_cast<int>(detect_default())};
  return isa;
}

void check_size(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("simd::") + what + ": size mismatch");
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return true;
    case Isa::kAvx2:
#if DOF_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return static_cast<Isa>(current().load(std::memory_order_relaxed)); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("simd: target not supported: " + std::string(isa_name(isa)));
  }
  current().store(static_cast<int>(isa), std::memory_order_relaxed);
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  check_size(a.size() == m * k && b.size() == k * n && c.size() == m * n, "gemm");
#if DOF_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::kAvx2) {
    avx2::gemm(a.data(), b.data(), c.data(), m, k, n, accumulate);
    return;
  }
#endif
  scalar::gemm(a.data(), b.data(), c.data(), m, k, n, accumulate);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_size(x.size() == y.size(), "axpy");
#if DOF_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::kAvx2) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
    return;
  }
#endif
  scalar::axpy(alpha, x.data(), y.data(), x.size());
}

void hadamard(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  check_size(x.size() == y.size() && x.size() == out.size(), "hadamard");
#if DOF_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::kAvx2) {
    avx2::hadamard(x.data(), y.data(), out.data(), x.size());
    return;
  }
#endif
  scalar::hadamard(x.data(), y.data(), out.data(), x.size());
}

void adam_update(const AdamCoefficients& coef, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::span<double> param) {
  check_size(grad.size() == m.size() && grad.size() == v.size() && grad.size() == param.size(),
             "adam_update");
#if DOF_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::kAvx2) {
    avx2::adam_update(coef, grad.data(), m.data(), v.data(), param.data(), grad.size());
    return;
  }
#endif
  scalar::adam_update(coef, grad.data(), m.data(), v.data(), param.data(), grad.size());
}

}  // namespace dof::simd
