#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "dof/common/rng.hpp"
#include "dof/simd/kernels.hpp"

using namespace dof;
using namespace dof::simd;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> naive_gemm(const std::vector<double>& a, const std::vector<double>& b, std::vector<double> c,
                               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s = s + a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

}  // namespace

TEST(SimdScalar, GemmMatchesNaiveLoopExactly) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(300), n = 1 + rng.below(140);
    const auto a = random_values(rng, m * k), b = random_values(rng, k * n), c0 = random_values(rng, m * n);
    for (bool acc : {false, true}) {
      std::vector<double> c = c0;
      scalar::gemm(a.data(), b.data(), c.data(), m, k, n, acc);
      EXPECT_TRUE(bit_equal(c, naive_gemm(a, b, c0, m, k, n, acc))) << m << "x" << k << "x" << n;
    }
  }
}

#if DOF_HAVE_AVX2_KERNELS

class SimdAvx2 : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks AVX2";
  }
};

TEST_F(SimdAvx2, GemmBitExactAgainstScalar) {
  Rng rng(11);
  // Shapes straddle the 4-row / 8-column micro tile and the cache blocks.
  const std::size_t shapes[][3] = {{1, 1, 1},   {3, 7, 5},     {4, 8, 8},    {5, 9, 17},  {4, 256, 128},
                                   {7, 257, 129}, {128, 729, 33}, {33, 64, 300}, {2, 600, 9}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], k = s[1], n = s[2];
    const auto a = random_values(rng, m * k), b = random_values(rng, k * n), c0 = random_values(rng, m * n);
    for (bool acc : {false, true}) {
      std::vector<double> cs = c0, cv = c0;
      scalar::gemm(a.data(), b.data(), cs.data(), m, k, n, acc);
      avx2::gemm(a.data(), b.data(), cv.data(), m, k, n, acc);
      EXPECT_TRUE(bit_equal(cs, cv)) << m << "x" << k << "x" << n << " acc=" << acc;
    }
  }
}

TEST_F(SimdAvx2, GemmBitExactOnRandomShapes) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(20), k = 1 + rng.below(70), n = 1 + rng.below(70);
    const auto a = random_values(rng, m * k, -1e3, 1e3), b = random_values(rng, k * n, -1e-3, 1e-3);
    std::vector<double> cs(m * n), cv(m * n);
    scalar::gemm(a.data(), b.data(), cs.data(), m, k, n, false);
    avx2::gemm(a.data(), b.data(), cv.data(), m, k, n, false);
    ASSERT_TRUE(bit_equal(cs, cv)) << m << "x" << k << "x" << n;
  }
}

TEST_F(SimdAvx2, ElementwiseKernelsBitExact) {
  Rng rng(13);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 31u, 1000u}) {
    const auto x = random_values(rng, n), y0 = random_values(rng, n);
    std::vector<double> ys = y0, yv = y0;
    scalar::axpy(-0.37, x.data(), ys.data(), n);
    avx2::axpy(-0.37, x.data(), yv.data(), n);
    EXPECT_TRUE(bit_equal(ys, yv)) << "axpy n=" << n;

    std::vector<double> hs(n), hv(n);
    scalar::hadamard(x.data(), y0.data(), hs.data(), n);
    avx2::hadamard(x.data(), y0.data(), hv.data(), n);
    EXPECT_TRUE(bit_equal(hs, hv)) << "hadamard n=" << n;
  }
}

TEST_F(SimdAvx2, AdamUpdateBitExact) {
  Rng rng(14);
  const AdamCoefficients coef{0.9, 0.999, 1e-8, 1e-3, 1.0 - 0.9 * 0.9 * 0.9, 1.0 - 0.999 * 0.999 * 0.999};
  for (std::size_t n : {1u, 4u, 7u, 129u}) {
    const auto g = random_values(rng, n);
    auto ms = random_values(rng, n), vs = random_values(rng, n, 0.0, 1.0), ps = random_values(rng, n);
    auto mv = ms, vv = vs, pv = ps;
    for (int step = 0; step < 5; ++step) {
      scalar::adam_update(coef, g.data(), ms.data(), vs.data(), ps.data(), n);
      avx2::adam_update(coef, g.data(), mv.data(), vv.data(), pv.data(), n);
    }
    EXPECT_TRUE(bit_equal(ms, mv));
    EXPECT_TRUE(bit_equal(vs, vv));
    EXPECT_TRUE(bit_equal(ps, pv));
  }
}

TEST_F(SimdAvx2, DispatchFollowsForcedIsa) {
  Rng rng(15);
  const std::size_t m = 6, k = 40, n = 11;
  const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
  const Isa before = active_isa();
  std::vector<double> c1(m * n), c2(m * n);
  force_isa(Isa::kScalar);
  EXPECT_EQ(active_isa(), Isa::kScalar);
  gemm(a, b, c1, m, k, n, false);
  force_isa(Isa::kAvx2);
  EXPECT_EQ(active_isa(), Isa::kAvx2);
  gemm(a, b, c2, m, k, n, false);
  EXPECT_TRUE(bit_equal(c1, c2));
  force_isa(before);
}

#endif

TEST(SimdDispatch, NamesAndScalarSupport) {
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
  EXPECT_EQ(isa_name(Isa::kAvx2), "avx2");
  EXPECT_TRUE(isa_supported(Isa::kScalar));
}

TEST(SimdDispatch, SizeMismatchThrows) {
  std::vector<double> a(6), b(6), c(3);
  EXPECT_THROW(gemm(a, b, c, 2, 3, 2, false), std::invalid_argument);
}
