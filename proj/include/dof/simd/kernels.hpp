#pragma once

// Dense double-precision kernels used by the differentiable core.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2 variant chosen at runtime. Variants vectorize across independent
// output elements only and never use fused multiply-add, so each output value
// is produced by the same sequence of IEEE operations on every path: results
// are bit-identical across dispatch targets.

#include <cstddef>
#include <span>
#include <string_view>

namespace dof::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

/// True when the running CPU (and this build) can execute `isa`.
bool isa_supported(Isa isa);

/// The variant currently used by the dispatching entry points. Defaults to the
/// best supported target; the DOF_SIMD environment variable ("scalar" or
/// "avx2") overrides the default at first use.
Isa active_isa();

/// Pins dispatch to `isa`. Throws std::invalid_argument if unsupported.
void force_isa(Isa isa);

/// C (m×n) = [C +] A (m×k) · B (k×n), all row-major and densely packed.
/// Per element the products are accumulated in increasing k order, starting
/// from 0 or from the existing C value when `accumulate` is set.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// y += alpha · x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out = x ∘ y
void hadamard(std::span<const double> x, std::span<const double> y, std::span<double> out);

/// One adaptive-moment update over a flat parameter block.
/// m = β1·m + (1−β1)·g;  v = β2·v + (1−β2)·g²;
/// p -= lr · (m / c1) / (sqrt(v / c2) + eps), with c1/c2 the bias corrections.
struct AdamCoefficients {
  double beta1;
  double beta2;
  double eps;
  double lr;
  double bias_correction1;
  double bias_correction2;
};
void adam_update(const AdamCoefficients& coef, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::span<double> param);

// Direct access to each variant for equivalence testing.
namespace scalar {
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void hadamard(const double* x, const double* y, double* out, std::size_t n);
void adam_update(const AdamCoefficients& coef, const double* grad, double* m, double* v,
                 double* param, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define DOF_HAVE_AVX2_KERNELS 1
namespace avx2 {
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void hadamard(const double* x, const double* y, double* out, std::size_t n);
void adam_update(const AdamCoefficients& coef, const double* grad, double* m, double* v,
                 double* param, std::size_t n);
}  // namespace avx2
#else
#define DOF_HAVE_AVX2_KERNELS 0
#endif

}  // namespace dof::simd
