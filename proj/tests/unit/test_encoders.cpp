#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dof/common/errors.hpp"
#include "dof/diffcore/optimizer.hpp"
#include "dof/encoders/encoders.hpp"
#include "dof/losses/losses.hpp"
#include "dof/metrics/metrics.hpp"
#include "test_support.hpp"

using namespace dof;
using dof::test::random_matrix;
using dof::test::random_normal;

namespace {

Tensor permute_cols(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, perm[c]);
  return out;
}

double theta_of(double logit) {
  Graph g;
  return bounded_risk(g.constant(Tensor::matrix(1, 1, {logit}))).value().item();
}

struct Cohort {
  Tensor x;
  SurvivalBatch surv;
};

// Event order follows a fixed linear score exactly, so ranking is learnable.
Cohort separable_cohort(std::uint64_t seed, std::size_t n, std::size_t p) {
  Rng rng(seed);
  Cohort c{random_normal(rng, p, n), {}};
  std::vector<double> w(p);
  for (double& v : w) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double score = 0.0;
    for (std::size_t k = 0; k < p; ++k) score += w[k] * c.x(k, i);
    c.surv.time.push_back(std::exp(-score));
    c.surv.event.push_back(1);
  }
  return c;
}

std::vector<double> train(UnimodalModel& model, const Cohort& c, int epochs, double lr) {
  Adam adam;
  std::vector<double> losses;
  for (int e = 0; e < epochs; ++e) {
    Graph g;
    const Var loss = cox_pl_loss(model.forward(g, g.constant(c.x)).second, c.surv);
    losses.push_back(loss.value().item());
    g.backward(loss);
    adam.step(model.parameters(), lr);
  }
  return losses;
}

}  // namespace

TEST(EncoderConfig, ValidationAndDefaults) {
  EXPECT_EQ(make_encoder_config("g", EncoderKind::kSnn, {10}).activation, Activation::kSelu);
  EXPECT_EQ(make_encoder_config("r", EncoderKind::kMlp, {10}).activation, Activation::kRelu);
  EXPECT_THROW(make_encoder_config("g", EncoderKind::kMlp, {10}, 1).validate(), ConfigError);
  EXPECT_THROW(make_encoder_config("g", EncoderKind::kMlp, {0}).validate(), ConfigError);
  EXPECT_THROW(make_encoder_config("r", EncoderKind::kRadiology, {9, 9}).validate(), ConfigError);
  EXPECT_EQ(make_encoder_config("r", EncoderKind::kRadiology, {9, 9, 56}).input_width(), 74u);
  EXPECT_EQ(parse_encoder_kind(encoder_kind_name(EncoderKind::kSnn)), EncoderKind::kSnn);
}

TEST(Encoder, OutputShapeForAnyBatchSize) {
  Rng rng(81);
  Encoder enc(make_encoder_config("g", EncoderKind::kSnn, {12}, 32, 16), 5);
  for (std::size_t n : {1u, 2u, 7u, 40u}) {
    const Tensor h = mlp_encode(enc, random_matrix(rng, 12, n));
    EXPECT_EQ(h.rows(), 32u);
    EXPECT_EQ(h.cols(), n);
  }
}

TEST(Encoder, WidthMismatchThrows) {
  Rng rng(82);
  Encoder enc(make_encoder_config("g", EncoderKind::kMlp, {12}, 8, 16), 5);
  EXPECT_THROW(mlp_encode(enc, random_matrix(rng, 11, 3)), std::invalid_argument);
}

TEST(Encoder, ZeroWeightsGiveZeroEmbedding) {
  Rng rng(83);
  for (EncoderKind kind : {EncoderKind::kMlp, EncoderKind::kSnn}) {
    Encoder enc(make_encoder_config("g", kind, {6}, 4, 8), 1);
    for (Parameter* p : enc.parameters()) p->value = Tensor(p->value.shape());
    const Tensor h = mlp_encode(enc, random_matrix(rng, 6, 5));
    for (double v : h.storage()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encoder, SameSeedSameEmbedding) {
  Rng rng(84);
  const Tensor x = random_matrix(rng, 10, 9);
  Encoder a(make_encoder_config("g", EncoderKind::kSnn, {10}, 8, 16), 77);
  Encoder b(make_encoder_config("g", EncoderKind::kSnn, {10}, 8, 16), 77);
  Encoder c(make_encoder_config("g", EncoderKind::kSnn, {10}, 8, 16), 78);
  EXPECT_EQ(mlp_encode(a, x).storage(), mlp_encode(b, x).storage());
  EXPECT_NE(mlp_encode(a, x).storage(), mlp_encode(c, x).storage());
}

TEST(Encoder, ColumnPermutationEquivariance) {
  Rng rng(85);
  for (EncoderKind kind : {EncoderKind::kMlp, EncoderKind::kSnn, EncoderKind::kRadiology}) {
    const std::vector<std::size_t> widths = kind == EncoderKind::kRadiology ? std::vector<std::size_t>{3, 4, 5}
                                                                             : std::vector<std::size_t>{7};
    Encoder enc(make_encoder_config("m", kind, widths, 6, 10), 9);
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 1 + rng.below(12);
      const Tensor x = random_matrix(rng, enc.config().input_width(), n, -2, 2);
      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      rng.shuffle(perm);
      ASSERT_EQ(permute_cols(mlp_encode(enc, x), perm).storage(), mlp_encode(enc, permute_cols(x, perm)).storage());
    }
  }
}

TEST(RadiologyFeatureNet, AcceptsTableWidthsAndZeroHandcrafted) {
  Rng rng(86);
  Encoder enc(make_encoder_config("radiology", EncoderKind::kRadiology, {9, 9, 56}), 3);
  const Tensor h = radiology_featurenet(enc, random_matrix(rng, 9, 5), random_matrix(rng, 9, 5), Tensor::matrix(56, 5));
  EXPECT_EQ(h.rows(), 32u);
  EXPECT_EQ(h.cols(), 5u);
  EXPECT_TRUE(h.all_finite());
}

TEST(RadiologyFeatureNet, BranchBatchMismatchThrows) {
  Rng rng(87);
  Encoder enc(make_encoder_config("radiology", EncoderKind::kRadiology, {9, 9, 56}), 3);
  EXPECT_THROW(radiology_featurenet(enc, random_matrix(rng, 9, 5), random_matrix(rng, 9, 4), Tensor::matrix(56, 5)),
               std::invalid_argument);
}

TEST(RadiologyFeatureNet, GradientReachesEveryBranch) {
  Rng rng(88);
  Encoder enc(make_encoder_config("radiology", EncoderKind::kRadiology, {9, 9, 56}), 4);
  const Tensor x = random_matrix(rng, 74, 6);
  Graph g;
  const Var h = enc.forward(g, g.constant(x));
  g.backward(test::probe(g, h, random_matrix(rng, h.value().rows(), h.value().cols())));
  // The first layer of each branch reads only its own block of rows.
  std::size_t nonzero_first_layers = 0;
  for (Parameter* p : enc.parameters()) {
    const bool first = p->name.find(".W") != std::string::npos &&
                       (p->value.cols() == 9 || p->value.cols() == 56);
    if (!first) continue;
    double norm = 0.0;
    for (double v : p->grad.storage()) norm += v * v;
    EXPECT_GT(norm, 0.0) << p->name;
    ++nonzero_first_layers;
  }
  EXPECT_EQ(nonzero_first_layers, 3u);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  Rng rng(89);
  for (EncoderKind kind : {EncoderKind::kSnn, EncoderKind::kRadiology}) {
    const std::vector<std::size_t> widths = kind == EncoderKind::kRadiology ? std::vector<std::size_t>{2, 3, 3}
                                                                             : std::vector<std::size_t>{4};
    UnimodalModel model(make_encoder_config("m", kind, widths, 3, 5), 21);
    const Tensor x = random_matrix(rng, model.encoder.config().input_width(), 5, -2, 2);
    const SurvivalBatch s{{1, 2, 3, 4, 5}, {1, 0, 1, 1, 0}};
    EXPECT_LT(test::gradient_check(model.parameters(),
                                   [&](Graph& g) { return cox_pl_loss(model.forward(g, g.constant(x)).second, s); }),
              1e-5);
  }
}

// ---- risk head -------------------------------------------------------------------

TEST(RiskHead, ZeroLogitIsZeroAndSaturatesAtBounds) {
  EXPECT_EQ(theta_of(0.0), 0.0);
  EXPECT_NEAR(theta_of(50.0), kRiskBound, 1e-12);
  EXPECT_NEAR(theta_of(-50.0), -kRiskBound, 1e-12);
}

TEST(RiskHead, MonotoneOddAndBounded) {
  Rng rng(90);
  std::vector<double> z(500);
  for (double& v : z) v = rng.uniform(-20, 20);
  std::sort(z.begin(), z.end());
  double prev = -kRiskBound;
  for (double v : z) {
    const double t = theta_of(v);
    ASSERT_GE(t, prev);
    ASSERT_GT(t, -kRiskBound);
    ASSERT_LT(t, kRiskBound);
    ASSERT_NEAR(theta_of(-v), -t, 1e-12);
    prev = t;
  }
}

TEST(RiskHead, ForwardMatchesHandFormula) {
  Rng rng(91);
  RiskHead head("head", 4, 3);
  head.bias.value[0] = 0.2;
  const Tensor h = random_matrix(rng, 4, 6);
  Graph g;
  const Tensor theta = head.forward(g, g.constant(h)).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double z = head.bias.value[0];
    for (std::size_t k = 0; k < 4; ++k) z += head.beta.value[k] * h(k, i);
    EXPECT_NEAR(theta[i], -3.0 + 6.0 / (1.0 + std::exp(-z)), 1e-12);
  }
}

// ---- training ---------------------------------------------------------------------

TEST(UnimodalTraining, SeparableCohortReachesHighConcordance) {
  const Cohort c = separable_cohort(92, 200, 10);
  UnimodalModel model(make_encoder_config("g", EncoderKind::kSnn, {10}), 13);
  const double before = metrics::concordance_index(model.predict(c.x), c.surv);
  train(model, c, 50, 1e-3);
  const double after = metrics::concordance_index(model.predict(c.x), c.surv);
  EXPECT_GT(after, 0.95);
  EXPECT_GE(after, before);
}

TEST(UnimodalTraining, PredictBoundedAndDeterministic) {
  const Cohort c = separable_cohort(93, 30, 5);
  UnimodalModel a(make_encoder_config("g", EncoderKind::kMlp, {5}, 8, 16), 4);
  UnimodalModel b(make_encoder_config("g", EncoderKind::kMlp, {5}, 8, 16), 4);
  train(a, c, 5, 1e-3);
  train(b, c, 5, 1e-3);
  const std::vector<double> pa = a.predict(c.x);
  EXPECT_EQ(pa, b.predict(c.x));
  for (double v : pa) {
    EXPECT_GT(v, -kRiskBound);
    EXPECT_LT(v, kRiskBound);
  }
}

// ---- checkpoints ---------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "dof_test_checkpoint";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.json";
  const Cohort c = separable_cohort(94, 20, 6);
  UnimodalModel a(make_encoder_config("g", EncoderKind::kSnn, {6}, 4, 8), 1);
  train(a, c, 3, 1e-2);
  save_checkpoint(path, a.parameters(), R"({"modality":"g"})");
  UnimodalModel b(make_encoder_config("g", EncoderKind::kSnn, {6}, 4, 8), 2);
  EXPECT_NE(a.predict(c.x), b.predict(c.x));
  const std::string meta = load_checkpoint(path, b.parameters());
  EXPECT_NE(meta.find("modality"), std::string::npos);
  EXPECT_EQ(a.predict(c.x), b.predict(c.x));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  const auto dir = std::filesystem::temp_directory_path() / "dof_test_checkpoint_bad";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.json";
  UnimodalModel a(make_encoder_config("g", EncoderKind::kSnn, {6}, 4, 8), 1);
  save_checkpoint(path, a.parameters());
  UnimodalModel b(make_encoder_config("g", EncoderKind::kSnn, {7}, 4, 8), 1);
  EXPECT_ANY_THROW(load_checkpoint(path, b.parameters()));
  std::filesystem::remove_all(dir);
}
