#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dof/diffcore/optimizer.hpp"
#include "dof/losses/losses.hpp"
#include "test_support.hpp"

using namespace dof;
using dof::test::brute_force_cox;
using dof::test::gradient_check;
using dof::test::random_matrix;
using dof::test::random_survival;

namespace {

double cox_value(const std::vector<double>& theta, const SurvivalBatch& s, CoxLossInfo* info = nullptr) {
  Graph g;
  return cox_pl_loss(g.constant(Tensor::matrix(1, theta.size(), theta)), s, info).value().item();
}

double nuclear(const Tensor& a) {
  Graph g;
  return nuclear_norm(g.constant(a)).value().item();
}

double mmo_value(const std::vector<Tensor>& hs, const MmoOptions& o = {}) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& h : hs) vars.push_back(g.constant(h));
  return mmo_loss(vars, o).value().item();
}

Tensor rotate(const Eigen::MatrixXd& q, const Tensor& h) {
  Tensor out = Tensor::matrix(h.rows(), h.cols());
  for (std::size_t r = 0; r < h.rows(); ++r)
    for (std::size_t c = 0; c < h.cols(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < h.rows(); ++k) s += q(r, k) * h(k, c);
      out(r, c) = s;
    }
  return out;
}

}  // namespace

// ---- Cox ------------------------------------------------------------------------

TEST(CoxLoss, SymmetricPairIsLn2) {
  const SurvivalBatch s{{1, 2}, {1, 1}};
  EXPECT_NEAR(cox_value({0, 0}, s), std::log(2.0), 1e-12);
}

TEST(CoxLoss, SymmetricPairGradient) {
  const SurvivalBatch s{{1, 2}, {1, 1}};
  Parameter theta("theta", Tensor::matrix(1, 2, {0, 0}));
  Graph g;
  g.backward(cox_pl_loss(g.parameter(theta), s));
  EXPECT_NEAR(theta.grad[0], -0.5, 1e-12);
  EXPECT_NEAR(theta.grad[1], 0.5, 1e-12);
}

TEST(CoxLoss, AllCensoredIsZeroWithFlag) {
  CoxLossInfo info;
  EXPECT_EQ(cox_value({0.3, -1.0}, SurvivalBatch{{1, 2}, {0, 0}}, &info), 0.0);
  EXPECT_TRUE(info.no_events);
  EXPECT_EQ(info.events, 0u);
}

TEST(CoxLoss, MatchesBruteForceRiskSets) {
  Rng rng(21);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(7);
    SurvivalBatch s = random_survival(rng, n, 1 + rng.below(4), 0.6);
    s.event[rng.below(n)] = 1;
    std::vector<double> theta(n);
    for (double& v : theta) v = rng.uniform(-3, 3);
    ASSERT_NEAR(cox_value(theta, s), brute_force_cox(theta, s), 1e-12) << "instance " << t;
  }
}

TEST(CoxLoss, FiveRandomPatientsWithTiesAgainstOracle) {
  const SurvivalBatch s{{2, 1, 2, 3, 1}, {1, 0, 1, 1, 1}};
  const std::vector<double> theta{0.4, -1.2, 2.0, 0.1, -0.3};
  EXPECT_NEAR(cox_value(theta, s), brute_force_cox(theta, s), 1e-12);
}

TEST(CoxLoss, GradientMatchesFiniteDifferences) {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(7);
    SurvivalBatch s = random_survival(rng, n, 4, 0.6);
    s.event[0] = 1;
    Parameter theta("theta", random_matrix(rng, 1, n, -3, 3));
    ASSERT_LT(gradient_check({&theta}, [&](Graph& g) { return cox_pl_loss(g.parameter(theta), s); }), 1e-5);
  }
}

TEST(CoxLoss, ShiftInvariantWithSingleSharedRiskSet) {
  // One event at the earliest time: every patient is in its risk set.
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(7);
    SurvivalBatch s;
    for (std::size_t i = 0; i < n; ++i) {
      s.time.push_back(2.0 + static_cast<double>(i));
      s.event.push_back(0);
    }
    const std::size_t e = rng.below(n);
    s.time[e] = 1.0;
    s.event[e] = 1;
    std::vector<double> theta(n), shifted(n);
    const double c = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < n; ++i) {
      theta[i] = rng.uniform(-3, 3);
      shifted[i] = theta[i] + c;
    }
    ASSERT_NEAR(cox_value(theta, s), cox_value(shifted, s), 1e-12);
  }
}

TEST(CoxLoss, ShapeAndValidation) {
  Graph g;
  EXPECT_THROW(cox_pl_loss(g.constant(Tensor::matrix(1, 3)), SurvivalBatch{{1, 2}, {1, 1}}), std::invalid_argument);
  EXPECT_THROW(SurvivalBatch({{1, -2}, {1, 1}}).validate(), std::invalid_argument);
  EXPECT_THROW(SurvivalBatch({{1, 2}, {1, 2}}).validate(), std::invalid_argument);
}

// ---- MMO ------------------------------------------------------------------------------

TEST(MmoLoss, SingleModalityWithLargeNormIsZero) {
  Rng rng(31);
  Tensor h = random_matrix(rng, 4, 6, 1, 2);
  ASSERT_GE(nuclear(h), 1.0);
  EXPECT_NEAR(mmo_value({h}), 0.0, 1e-12);
}

TEST(MmoLoss, OrthogonalColumnSpacesGiveZero) {
  Rng rng(32);
  for (int t = 0; t < 100; ++t) {
    const std::size_t l = 6, n = 5, k = 1 + rng.below(l - 1);
    Tensor h1 = Tensor::matrix(l, n), h2 = Tensor::matrix(l, n);
    for (std::size_t r = 0; r < l; ++r)
      for (std::size_t c = 0; c < n; ++c) (r < k ? h1 : h2)(r, c) = rng.uniform(-2, 2);
    if (nuclear(h1) < 1.0 || nuclear(h2) < 1.0) continue;
    ASSERT_LT(std::abs(mmo_value({h1, h2})), 1e-9);
  }
}

TEST(MmoLoss, DuplicatedEmbeddingClosedForm) {
  Rng rng(33);
  for (int t = 0; t < 100; ++t) {
    const std::size_t l = 2 + rng.below(5), n = 2 + rng.below(8);
    const Tensor a = random_matrix(rng, l, n, -2, 2);
    const double na = nuclear(a);
    if (na < 1.0) continue;
    const double expected = (2.0 - std::sqrt(2.0)) * na / (2.0 * static_cast<double>(n));
    ASSERT_NEAR(mmo_value({a, a}), expected, 1e-9);
  }
}

TEST(MmoLoss, NonNegativeWhenNormsAboveFloor) {
  Rng rng(34);
  int checked = 0;
  while (checked < 1000) {
    const std::size_t m = 1 + rng.below(4), l = 1 + rng.below(6), n = 1 + rng.below(6);
    std::vector<Tensor> hs;
    bool ok = true;
    for (std::size_t i = 0; i < m; ++i) {
      hs.push_back(random_matrix(rng, l, n, -2, 2));
      ok = ok && nuclear(hs.back()) >= 1.0;
    }
    if (!ok) continue;
    ASSERT_GE(mmo_value(hs), -1e-12);
    ++checked;
  }
}

TEST(MmoLoss, InvariantUnderCommonRotation) {
  Rng rng(35);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.below(3), l = 2 + rng.below(5), n = 1 + rng.below(6);
    std::vector<Tensor> hs, rotated;
    Eigen::MatrixXd z(l, l);
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ();
    for (std::size_t i = 0; i < m; ++i) {
      hs.push_back(random_matrix(rng, l, n, -2, 2));
      rotated.push_back(rotate(q, hs.back()));
    }
    ASSERT_NEAR(mmo_value(hs), mmo_value(rotated), 1e-9);
  }
}

TEST(MmoLoss, LiteralScalingVariantDiffers) {
  Rng rng(36);
  const Tensor a = random_matrix(rng, 3, 4, 1, 2), b = random_matrix(rng, 3, 4, -2, -1);
  MmoOptions literal;
  literal.scale_whole_difference = false;
  const double whole = mmo_value({a, b});
  const double lit = mmo_value({a, b}, literal);
  EXPECT_NEAR(lit, (nuclear(a) + nuclear(b)) / 8.0 - std::abs(nuclear(a) + nuclear(b) - 8.0 * whole), 1e-9);
}

TEST(MmoLoss, GradientMatchesFiniteDifferences) {
  Rng rng(37);
  int checked = 0;
  while (checked < 100) {
    const std::size_t l = 2 + rng.below(3), n = 2 + rng.below(3);
    Parameter h1("h1", random_matrix(rng, l, n, -2, 2)), h2("h2", random_matrix(rng, l, n, -2, 2));
    // Stay clear of the floor kink and of repeated singular values.
    if (nuclear(h1.value) < 1.1 || nuclear(h2.value) < 1.1) continue;
    Tensor joint = Tensor::matrix(l, 2 * n);
    for (std::size_t r = 0; r < l; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        joint(r, c) = h1.value(r, c);
        joint(r, n + c) = h2.value(r, c);
      }
    bool separated = true;
    for (const Tensor* t : {&h1.value, &h2.value, &joint}) {
      const Svd s = jacobi_svd(*t);
      separated = separated && s.s.back() > 1e-3;
      for (std::size_t i = 1; i < s.s.size(); ++i) separated = separated && s.s[i - 1] - s.s[i] > 1e-3;
    }
    if (!separated) continue;
    ASSERT_LT(gradient_check({&h1, &h2}, [&](Graph& g) {
                const Var hs[] = {g.parameter(h1), g.parameter(h2)};
                return mmo_loss(hs);
              }),
              1e-5);
    ++checked;
  }
}

TEST(MmoLoss, MinimizingAloneOrthogonalizesWithoutCollapse) {
  Rng rng(38);
  const std::size_t m = 3, l = 12, n = 8;
  std::vector<Parameter> hs;
  for (std::size_t i = 0; i < m; ++i) hs.emplace_back("h" + std::to_string(i), random_matrix(rng, l, n, -1, 1));
  std::vector<Parameter*> ps;
  for (Parameter& p : hs) ps.push_back(&p);
  auto loss_value = [&] {
    std::vector<Tensor> vals;
    for (const Parameter& p : hs) vals.push_back(p.value);
    return mmo_value(vals);
  };
  const double initial = loss_value();
  ASSERT_GT(initial, 0.0);
  Adam adam;
  for (int step = 0; step < 200; ++step) {
    Graph g;
    std::vector<Var> vars;
    for (Parameter& p : hs) vars.push_back(g.parameter(p));
    g.backward(mmo_loss(vars));
    adam.step(ps, 0.02);
  }
  EXPECT_LT(loss_value(), 0.1 * initial);
  for (const Parameter& p : hs) EXPECT_GE(nuclear(p.value), 1.0 - 1e-6);
}

// ---- combined ----------------------------------------------------------------------

TEST(CombinedLoss, GammaZeroIsCoxExactly) {
  Rng rng(41);
  const SurvivalBatch s = random_survival(rng, 6, 3, 0.7);
  const Tensor theta = random_matrix(rng, 1, 6);
  Graph g;
  const Var hs[] = {g.constant(random_matrix(rng, 3, 6)), g.constant(random_matrix(rng, 3, 6))};
  const CombinedLoss c = combined_loss(g.constant(theta), s, hs, 0.0);
  EXPECT_FALSE(c.has_mmo);
  EXPECT_EQ(c.total.value().item(), cox_value(theta.storage(), s));
}

TEST(CombinedLoss, LinearInGamma) {
  Rng rng(42);
  SurvivalBatch s = random_survival(rng, 6, 3, 0.7);
  s.event[0] = 1;
  const Tensor theta = random_matrix(rng, 1, 6);
  const Tensor a = random_matrix(rng, 3, 6, -2, 2), b = random_matrix(rng, 3, 6, -2, 2);
  double total[3], cox = 0.0, mmo = 0.0;
  const double gammas[] = {0.5, 1.0, 2.0};
  for (int i = 0; i < 3; ++i) {
    Graph g;
    const Var hs[] = {g.constant(a), g.constant(b)};
    const CombinedLoss c = combined_loss(g.constant(theta), s, hs, gammas[i]);
    total[i] = c.total.value().item();
    cox = c.cox.value().item();
    mmo = c.mmo.value().item();
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(total[i], cox + gammas[i] * mmo, 1e-12);
  EXPECT_NEAR(total[2] - total[1], 2.0 * (total[1] - total[0]), 1e-12);
}

// ---- similarity ---------------------------------------------------------------------

TEST(SimilarityLoss, IdenticalAndOrthogonalEmbeddings) {
  Rng rng(51);
  const Tensor a = random_matrix(rng, 4, 5);
  {
    Graph g;
    const Var hs[] = {g.constant(a), g.constant(a), g.constant(a)};
    EXPECT_NEAR(similarity_loss(hs).value().item(), -1.0, 1e-12);
  }
  Tensor e1 = Tensor::matrix(2, 3), e2 = Tensor::matrix(2, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    e1(0, c) = 1.0 + c;
    e2(1, c) = -2.0;
  }
  Graph g;
  const Var hs[] = {g.constant(e1), g.constant(e2)};
  EXPECT_NEAR(similarity_loss(hs).value().item(), 0.0, 1e-15);
}

TEST(SimilarityLoss, GradientMatchesFiniteDifferences) {
  Rng rng(52);
  for (int t = 0; t < 50; ++t) {
    Parameter a("a", random_matrix(rng, 3, 4)), b("b", random_matrix(rng, 3, 4));
    ASSERT_LT(gradient_check({&a, &b}, [&](Graph& g) {
                const Var hs[] = {g.parameter(a), g.parameter(b)};
                return similarity_loss(hs);
              }),
              1e-5);
  }
}
