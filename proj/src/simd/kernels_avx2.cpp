// Compiled with -mavx2 only (no -mfma): multiply and add stay separate so the
// results match the scalar reference bit for bit.

#include "dof/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace dof::simd::avx2 {

namespace {

constexpr std::size_t kColBlock = 128;
constexpr std::size_t kDepthBlock = 256;

// C[rows i..i+3, cols j..j+7] += A[i.., p0..p1) · B[p0..p1), j..]
inline void micro_4x8(const double* a, const double* b, double* c, std::size_t k,
                      std::size_t n, std::size_t i, std::size_t j, std::size_t p0,
                      std::size_t p1) {
  double* c0 = c + (i + 0) * n + j;
  double* c1 = c + (i + 1) * n + j;
  double* c2 = c + (i + 2) * n + j;
  double* c3 = c + (i + 3) * n + j;
  __m256d c00 = _mm256_loadu_pd(c0), c01 = _mm256_loadu_pd(c0 + 4);
  __m256d c10 = _mm256_loadu_pd(c1), c11 = _mm256_loadu_pd(c1 + 4);
  __m256d c20 = _mm256_loadu_pd(c2), c21 = _mm256_loadu_pd(c2 + 4);
  __m256d c30 = _mm256_loadu_pd(c3), c31 = _mm256_loadu_pd(c3 + 4);
  const double* a0 = a + (i + 0) * k;
  const double* a1 = a + (i + 1) * k;
  const double* a2 = a + (i + 2) * k;
  const double* a3 = a + (i + 3) * k;
  for (std::size_t p = p0; p < p1; ++p) {
    const double* brow = b + p * n + j;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    __m256d s = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_add_pd(c00, _mm256_mul_pd(s, b0));
    c01 = _mm256_add_pd(c01, _mm256_mul_pd(s, b1));
    s = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_add_pd(c10, _mm256_mul_pd(s, b0));
    c11 = _mm256_add_pd(c11, _mm256_mul_pd(s, b1));
    s = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_add_pd(c20, _mm256_mul_pd(s, b0));
    c21 = _mm256_add_pd(c21, _mm256_mul_pd(s, b1));
    s = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_add_pd(c30, _mm256_mul_pd(s, b0));
    c31 = _mm256_add_pd(c31, _mm256_mul_pd(s, b1));
  }
  _mm256_storeu_pd(c0, c00);
  _mm256_storeu_pd(c0 + 4, c01);
  _mm256_storeu_pd(c1, c10);
  _mm256_storeu_pd(c1 + 4, c11);
  _mm256_storeu_pd(c2, c20);
  _mm256_storeu_pd(c2 + 4, c21);
  _mm256_storeu_pd(c3, c30);
  _mm256_storeu_pd(c3 + 4, c31);
}

// Single row, columns [j0, j1).
inline void row_strip(const double* a, const double* b, double* c, std::size_t k,
                      std::size_t n, std::size_t i, std::size_t j0, std::size_t j1,
                      std::size_t p0, std::size_t p1) {
  const double* arow = a + i * k;
  double* crow = c + i * n;
  std::size_t j = j0;
  for (; j + 4 <= j1; j += 4) {
    __m256d acc = _mm256_loadu_pd(crow + j);
    for (std::size_t p = p0; p < p1; ++p) {
      acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_broadcast_sd(arow + p),
                                             _mm256_loadu_pd(b + p * n + j)));
    }
    _mm256_storeu_pd(crow + j, acc);
  }
  for (; j < j1; ++j) {
    double acc = crow[j];
    for (std::size_t p = p0; p < p1; ++p) acc = acc + arow[p] * b[p * n + j];
    crow[j] = acc;
  }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t jb = 0; jb < n; jb += kColBlock) {
    const std::size_t je = std::min(n, jb + kColBlock);
    const std::size_t j8 = jb + (je - jb) / 8 * 8;
    for (std::size_t pb = 0; pb < k; pb += kDepthBlock) {
      const std::size_t pe = std::min(k, pb + kDepthBlock);
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        for (std::size_t j = jb; j < j8; j += 8) micro_4x8(a, b, c, k, n, i, j, pb, pe);
        if (j8 < je) {
          for (std::size_t r = i; r < i + 4; ++r) row_strip(a, b, c, k, n, r, j8, je, pb, pe);
        }
      }
      for (; i < m; ++i) row_strip(a, b, c, k, n, i, jb, je, pb, pe);
    }
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void hadamard(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void adam_update(const AdamCoefficients& coef, const double* grad, double* m, double* v,
                 double* param, std::size_t n) {
  const __m256d b1 = _mm256_set1_pd(coef.beta1);
  const __m256d b2 = _mm256_set1_pd(coef.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - coef.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - coef.beta2);
  const __m256d c1 = _mm256_set1_pd(coef.bias_correction1);
  const __m256d c2 = _mm256_set1_pd(coef.bias_correction2);
  const __m256d eps = _mm256_set1_pd(coef.eps);
  const __m256d lr = _mm256_set1_pd(coef.lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_add_pd(_mm256_mul_pd(b1, mv), _mm256_mul_pd(omb1, g));
    vv = _mm256_add_pd(_mm256_mul_pd(b2, vv), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(mv, c1);
    const __m256d vhat = _mm256_div_pd(vv, c2);
    const __m256d step =
        _mm256_mul_pd(lr, _mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), eps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  if (i < n) scalar::adam_update(coef, grad + i, m + i, v + i, param + i, n - i);
}

}  // namespace dof::simd::avx2
