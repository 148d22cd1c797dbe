#include <gtest/gtest.h>

#include <cmath>

#include "dof/common/errors.hpp"
#include "dof/diffcore/optimizer.hpp"
#include "dof/fusion/fusion.hpp"
#include "dof/losses/losses.hpp"
#include "test_support.hpp"

using namespace dof;
using dof::test::gradient_check;
using dof::test::random_matrix;

namespace {

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<Encoder> small_encoders(std::size_t m, std::size_t in, std::size_t l1, std::uint64_t seed) {
  std::vector<Encoder> out;
  for (std::size_t i = 0; i < m; ++i)
    out.emplace_back(make_encoder_config("m" + std::to_string(i), EncoderKind::kSnn, {in + i}, l1, 5), seed + i);
  return out;
}

std::vector<Tensor> small_inputs(Rng& rng, std::size_t m, std::size_t in, std::size_t n) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(random_matrix(rng, in + i, n, -2, 2));
  return out;
}

FusionConfig small_config(std::size_t m, std::size_t l1, std::size_t l2) {
  FusionConfig c;
  c.modalities = m;
  c.embedding = l1;
  c.scaled = l2;
  c.hidden = 6;
  return c;
}

std::vector<Var> constants(Graph& g, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const Tensor& x : xs) out.push_back(g.constant(x));
  return out;
}

Tensor fuse_values(const std::vector<Tensor>& gated) {
  Graph g;
  return tensor_fuse(constants(g, gated)).value();
}

}  // namespace

// ---- sizes ----------------------------------------------------------------------------

TEST(FusionConfig, ScaledSizesAndWidths) {
  EXPECT_EQ(default_scaled_size(2), 32u);
  EXPECT_EQ(default_scaled_size(3), 16u);
  EXPECT_EQ(default_scaled_size(4), 8u);
  EXPECT_THROW(default_scaled_size(1), ConfigError);
  FusionConfig c;
  EXPECT_EQ(c.fused_width(), 4913u);
  c.combine = CombineStrategy::kConcatenation;
  EXPECT_EQ(c.fused_width(), 48u);
}

// ---- attention gate ------------------------------------------------------------------

TEST(AttentionGate, ZeroBilinearWeightsHalveTheScaledEmbedding) {
  Rng rng(101);
  AttentionParams p("gate", 3, 2, 2, 7);
  p.wa.value.fill(0.0);
  p.ba.value.fill(0.0);
  Graph g;
  const Var h = g.constant(random_matrix(rng, 3, 4));
  const Var others[] = {g.constant(random_matrix(rng, 3, 4))};
  const Tensor gated = attention_gate(g, h, others, p).value();
  const Tensor scaled = attention_gate(g, h, others, p, false).value();
  for (std::size_t i = 0; i < gated.size(); ++i) EXPECT_EQ(gated[i], 0.5 * scaled[i]);
}

TEST(AttentionGate, ZeroScaledEmbeddingGivesZero) {
  Rng rng(102);
  AttentionParams p("gate", 3, 2, 3, 7);
  p.ws.value.fill(0.0);
  Graph g;
  const Var h = g.constant(random_matrix(rng, 3, 4));
  const Var others[] = {g.constant(random_matrix(rng, 3, 4)), g.constant(random_matrix(rng, 3, 4))};
  const Tensor gated = attention_gate(g, h, others, p).value();
  for (double v : gated.storage()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionGate, HandComputedBilinearForm) {
  // l1 = 2, l2 = 1, M = 2.
  AttentionParams p("gate", 2, 1, 2, 1);
  p.wa.value = Tensor::matrix(2, 2, {1, 0, 2, 1});
  p.ba.value.fill(-12.5);
  p.ws.value = Tensor::matrix(1, 2, {0.5, -1});
  p.bs.value.fill(0.25);
  Graph g;
  const Var h = g.constant(Tensor::matrix(2, 1, {1, 2}));
  const Var others[] = {g.constant(Tensor::matrix(2, 1, {3, -1}))};
  // hᵀW = [5, 2]; · [3, -1] = 13; 13 − 12.5 = 0.5. Scaled: 0.5 − 2 + 0.25 = −1.25.
  EXPECT_NEAR(attention_gate(g, h, others, p).value().item(), sigmoid_of(0.5) * -1.25, 1e-15);
}

TEST(AttentionGate, NeedsOtherModalitiesAndMatchingColumns) {
  Rng rng(103);
  AttentionParams p("gate", 3, 2, 2, 7);
  Graph g;
  const Var h = g.constant(random_matrix(rng, 3, 4));
  EXPECT_THROW(attention_gate(g, h, {}, p), std::invalid_argument);
  const Var bad[] = {g.constant(random_matrix(rng, 3, 5))};
  EXPECT_THROW(attention_gate(g, h, bad, p), std::invalid_argument);
}

// ---- tensor fusion -------------------------------------------------------------------

TEST(TensorFuse, TwoScalarModalities) {
  const Tensor f = fuse_values({Tensor::matrix(1, 1, {2.0}), Tensor::matrix(1, 1, {5.0})});
  EXPECT_EQ(f.storage(), (std::vector<double>{1, 5, 2, 10}));
}

TEST(TensorFuse, ZeroEmbeddingsGiveOneHot) {
  const Tensor f = fuse_values({Tensor::matrix(2, 3), Tensor::matrix(3, 3), Tensor::matrix(1, 3)});
  ASSERT_EQ(f.rows(), 3u * 4u * 2u);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f(r, c), r == 0 ? 1.0 : 0.0);
}

TEST(TensorFuse, DefaultThreeModalityLength) {
  Rng rng(104);
  const Tensor f = fuse_values({random_matrix(rng, 16, 2), random_matrix(rng, 16, 2), random_matrix(rng, 16, 2)});
  EXPECT_EQ(f.rows(), 4913u);
  EXPECT_EQ(f.cols(), 2u);
}

TEST(TensorFuse, MatchesExplicitIndexFormula) {
  Rng rng(105);
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 1 + rng.below(4), n = 1 + rng.below(4);
    std::vector<Tensor> vs;
    std::vector<std::size_t> sides;
    for (std::size_t i = 0; i < m; ++i) {
      vs.push_back(random_matrix(rng, 1 + rng.below(4), n, -2, 2));
      sides.push_back(vs.back().rows() + 1);
    }
    const Tensor f = fuse_values(vs);
    std::size_t total = 1;
    for (std::size_t s : sides) total *= s;
    ASSERT_EQ(f.rows(), total);
    for (std::size_t row = 0; row < total; ++row) {
      // Decode row into per-modality positions, last modality fastest.
      std::size_t rest = row;
      std::vector<std::size_t> pos(m);
      for (std::size_t i = m; i-- > 0;) {
        pos[i] = rest % sides[i];
        rest /= sides[i];
      }
      for (std::size_t c = 0; c < n; ++c) {
        double expected = 1.0;
        for (std::size_t i = 0; i < m; ++i) expected *= pos[i] == 0 ? 1.0 : vs[i](pos[i] - 1, c);
        ASSERT_NEAR(f(row, c), expected, 1e-12 * std::max(1.0, std::abs(expected)));
      }
    }
  }
}

TEST(TensorFuse, ConstantSlotAndUnimodalSlices) {
  Rng rng(106);
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 2 + rng.below(3), n = 1 + rng.below(5);
    std::vector<Tensor> vs;
    std::vector<std::size_t> stride(m, 1);
    for (std::size_t i = 0; i < m; ++i) vs.push_back(random_matrix(rng, 1 + rng.below(4), n, -2, 2));
    for (std::size_t i = m - 1; i-- > 0;) stride[i] = stride[i + 1] * (vs[i + 1].rows() + 1);
    const Tensor f = fuse_values(vs);
    for (std::size_t c = 0; c < n; ++c) {
      ASSERT_EQ(f(0, c), 1.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < vs[i].rows(); ++k) ASSERT_EQ(f((k + 1) * stride[i], c), vs[i](k, c));
    }
  }
}

TEST(TensorFuse, GradientMatchesFiniteDifferences) {
  Rng rng(107);
  for (int t = 0; t < 30; ++t) {
    const std::size_t m = 1 + rng.below(3), n = 1 + rng.below(3);
    std::vector<Parameter> ps;
    for (std::size_t i = 0; i < m; ++i) ps.emplace_back("v" + std::to_string(i), random_matrix(rng, 1 + rng.below(3), n));
    std::vector<Parameter*> ptrs;
    for (Parameter& p : ps) ptrs.push_back(&p);
    std::size_t rows = 1;
    for (const Parameter& p : ps) rows *= p.value.rows() + 1;
    const Tensor r = random_matrix(rng, rows, n);
    ASSERT_LT(gradient_check(ptrs,
                             [&](Graph& g) {
                               std::vector<Var> vs;
                               for (Parameter& p : ps) vs.push_back(g.parameter(p));
                               return test::probe(g, tensor_fuse(vs), r);
                             }),
              1e-6);
  }
}

TEST(TensorFuse, RejectsEmptyAndMismatchedInputs) {
  Graph g;
  EXPECT_THROW(tensor_fuse({}), std::invalid_argument);
  const Var vs[] = {g.constant(Tensor::matrix(2, 3)), g.constant(Tensor::matrix(2, 4))};
  EXPECT_THROW(tensor_fuse(vs), std::invalid_argument);
}

// ---- full model ---------------------------------------------------------------------

TEST(FusionModel, FullGradientCheckSmallDims) {
  Rng rng(108);
  FusionModel model(small_encoders(3, 3, 4, 50), small_config(3, 4, 2), 51);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 3, 3);
  const SurvivalBatch s{{1, 2, 3}, {1, 1, 0}};
  const double err = gradient_check(model.parameters(), [&](Graph& g) {
    const auto out = model.forward(g, constants(g, xs));
    return combined_loss(out.risk, s, out.embeddings, 0.5).total;
  });
  EXPECT_LT(err, 1e-4);
}

TEST(FusionModel, GradientReachesEveryEncoder) {
  Rng rng(109);
  FusionModel model(small_encoders(3, 4, 4, 60), small_config(3, 4, 2), 61);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 4, 6);
  Graph g;
  const auto out = model.forward(g, constants(g, xs));
  g.backward(cox_pl_loss(out.risk, SurvivalBatch{{1, 2, 3, 4, 5, 6}, {1, 1, 1, 0, 1, 0}}));
  for (Encoder& e : model.encoders()) {
    double norm = 0.0;
    for (Parameter* p : e.parameters())
      for (double v : p->grad.storage()) norm += v * v;
    EXPECT_GT(norm, 0.0) << e.config().modality;
  }
}

TEST(FusionModel, FrozenEncodersStayBitIdentical) {
  Rng rng(110);
  FusionModel model(small_encoders(3, 4, 4, 70), small_config(3, 4, 2), 71);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 4, 8);
  const SurvivalBatch s{{1, 2, 3, 4, 5, 6, 7, 8}, {1, 0, 1, 1, 0, 1, 1, 1}};
  std::vector<Tensor> before;
  for (Parameter* p : model.encoder_parameters()) before.push_back(p->value);
  std::vector<Tensor> fusion_before;
  for (Parameter* p : model.fusion_parameters()) fusion_before.push_back(p->value);
  Adam adam;
  for (int e = 0; e < 5; ++e) {
    Graph g;
    const auto out = model.forward(g, constants(g, xs), false, true);
    g.backward(combined_loss(out.risk, s, out.embeddings, 0.5).total);
    adam.step(model.parameters(), 1e-2);
  }
  const auto enc = model.encoder_parameters();
  for (std::size_t i = 0; i < enc.size(); ++i) ASSERT_EQ(enc[i]->value.storage(), before[i].storage()) << enc[i]->name;
  bool moved = false;
  const auto fus = model.fusion_parameters();
  for (std::size_t i = 0; i < fus.size(); ++i) moved = moved || fus[i]->value.storage() != fusion_before[i].storage();
  EXPECT_TRUE(moved);
}

TEST(FusionModel, DeterministicPerSeedAndBounded) {
  Rng rng(111);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 4, 7);
  FusionModel a(small_encoders(3, 4, 4, 80), small_config(3, 4, 2), 81);
  FusionModel b(small_encoders(3, 4, 4, 80), small_config(3, 4, 2), 81);
  const std::vector<double> pa = a.predict(xs);
  EXPECT_EQ(pa, b.predict(xs));
  for (double v : pa) {
    EXPECT_GT(v, -kRiskBound);
    EXPECT_LT(v, kRiskBound);
  }
}

TEST(FusionModel, RejectsMismatchedEncoders) {
  EXPECT_THROW(FusionModel(small_encoders(2, 3, 4, 1), small_config(3, 4, 2), 1), ConfigError);
  EXPECT_THROW(FusionModel(small_encoders(3, 3, 4, 1), small_config(3, 5, 2), 1), ConfigError);
}

// ---- ablation ---------------------------------------------------------------------------

TEST(Ablation, FourVariantsWithDefaultFirst) {
  const auto grid = ablation_grid();
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_TRUE(grid[0].gating);
  EXPECT_EQ(grid[0].combine, CombineStrategy::kTensorFusion);
  const FusionConfig def;
  EXPECT_TRUE(def.gating);
  EXPECT_EQ(def.combine, CombineStrategy::kTensorFusion);
  Rng rng(112);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 4, 5);
  for (const AblationVariant& v : grid) {
    const FusionConfig c = ablation_variant(small_config(3, 4, 2), v);
    EXPECT_EQ(c.gating, v.gating);
    EXPECT_EQ(c.combine, v.combine);
    FusionModel model(small_encoders(3, 4, 4, 90), c, 91);
    Graph g;
    const auto out = model.forward(g, constants(g, xs));
    const std::size_t width = v.combine == CombineStrategy::kConcatenation ? 3u * 2u : 27u;
    EXPECT_EQ(out.combined.value().rows(), width) << v.label;
    EXPECT_EQ(out.risk.value().cols(), 5u);
  }
}

TEST(Ablation, GatingOffUsesScaledEmbeddingsDirectly) {
  Rng rng(113);
  const std::vector<Tensor> xs = small_inputs(rng, 2, 4, 3);
  FusionConfig c = small_config(2, 4, 3);
  c.gating = false;
  c.combine = CombineStrategy::kConcatenation;
  FusionModel model(small_encoders(2, 4, 4, 95), c, 96);
  Graph g;
  const auto out = model.forward(g, constants(g, xs));
  const Tensor& combined = out.combined.value();
  for (std::size_t m = 0; m < 2; ++m) {
    const Tensor& gated = out.gated[m].value();
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t c2 = 0; c2 < 3; ++c2) EXPECT_EQ(combined(m * 3 + k, c2), gated(k, c2));
  }
}

// ---- correlation baseline ----------------------------------------------------------------

TEST(CorrelationFusion, ShapesGradientsAndDeterminism) {
  Rng rng(114);
  const std::vector<Tensor> xs = small_inputs(rng, 3, 3, 4);
  CorrelationFusionModel model(small_encoders(3, 3, 4, 120), 3, 121);
  CorrelationFusionModel twin(small_encoders(3, 3, 4, 120), 3, 121);
  EXPECT_EQ(model.predict(xs), twin.predict(xs));
  const SurvivalBatch s{{1, 2, 3, 4}, {1, 1, 0, 1}};
  const double err = gradient_check(model.parameters(), [&](Graph& g) {
    const auto out = model.forward(g, constants(g, xs));
    return add(cox_pl_loss(out.risk, s), scale(similarity_loss(out.embeddings), 0.1));
  });
  EXPECT_LT(err, 1e-4);
  EXPECT_THROW(CorrelationFusionModel(small_encoders(1, 3, 4, 1), 2, 1), ConfigError);
}
