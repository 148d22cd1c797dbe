#include "dof/simd/kernels.hpp"

#include <cmath>

namespace dof::simd::scalar {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + s * brow[j];
    }
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void hadamard(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void adam_update(const AdamCoefficients& coef, const double* grad, double* m, double* v,
                 double* param, std::size_t n) {
  const double one_minus_b1 = 1.0 - coef.beta1;
  const double one_minus_b2 = 1.0 - coef.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = coef.beta1 * m[i] + one_minus_b1 * g;
    v[i] = coef.beta2 * v[i] + one_minus_b2 * (g * g);
    const double mhat = m[i] / coef.bias_correction1;
    const double vhat = v[i] / coef.bias_correction2;
    param[i] = param[i] - coef.lr * (mhat / (std::sqrt(vhat) + coef.eps));
  }
}

}  // namespace dof::simd::scalar
