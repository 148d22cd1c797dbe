#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dof/encoders/encoders.hpp"

namespace dof {

enum class CombineStrategy { kTensorFusion, kConcatenation };

std::string_view combine_name(CombineStrategy c);

/// Pre-fusion scaled embedding size: 32 for two modalities, 16 for three,
/// 8 for four (and beyond). Throws ConfigError for fewer than two.
std::size_t default_scaled_size(std::size_t modalities);

struct FusionConfig {
  std::size_t modalities = 3;
  std::size_t embedding = 32;    // l1
  std::size_t scaled = 0;        // l2; 0 selects default_scaled_size
  std::size_t hidden = 128;      // Φ_F width
  std::size_t head_layers = 2;   // Φ_F depth
  bool gating = true;
  CombineStrategy combine = CombineStrategy::kTensorFusion;
  Activation head_activation = Activation::kRelu;

  std::size_t scaled_size() const { return scaled != 0 ? scaled : default_scaled_size(modalities); }
  /// Width of the combined representation fed to Φ_F.
  std::size_t fused_width() const;
  void validate() const;
};

/// Per-modality gate parameters. The attention weights are l2 bilinear forms
/// a_m[k] = sigmoid(h_mᵀ·W_A[k]·H_others + b_A[k]) with W_A[k] of size
/// l1 × (M−1)·l1, stored stacked as an (l2·l1) × ((M−1)·l1) matrix.
/// The scaling layer h_m^S = W_S·h_m + b_S is linear.
struct AttentionParams {
  Parameter wa;
  Parameter ba;
  Parameter ws;
  Parameter bs;

  AttentionParams() = default;
  AttentionParams(const std::string& name, std::size_t embedding, std::size_t scaled,
                  std::size_t modalities, std::uint64_t seed);
  std::vector<Parameter*> parameters();
};

/// attention_gate: a_m ∘ h_m^S for modality embedding h_m (l1 × N) given the
/// other M−1 embeddings. With gating off returns h_m^S. Throws
/// std::invalid_argument when `others` is empty or column counts differ.
Var attention_gate(Graph& g, Var h, std::span<const Var> others, AttentionParams& params,
                   bool gating = true, bool trainable = true);

/// tensor_fuse: per column, the Kronecker product of [1; v_m] over modalities,
/// modality 1 varying slowest. Output rows: Π (l2_m + 1). Index of a term
/// with per-modality positions (i_1, …, i_M), i_m ∈ [0, l2_m] where 0 is the
/// constant slot: ((i_1·(l2_2+1) + i_2)·(l2_3+1) + i_3)…
/// Throws std::invalid_argument on an empty list or differing column counts.
Var tensor_fuse(std::span<const Var> gated);

/// Post-fusion stack Φ_F plus bounded Cox head.
struct FusionHead {
  std::vector<DenseLayer> layers;
  RiskHead risk;
  Activation activation = Activation::kRelu;

  FusionHead() = default;
  FusionHead(std::size_t input_width, const FusionConfig& config, std::uint64_t seed);
  /// Returns {h_F, θ_F}.
  std::pair<Var, Var> forward(Graph& g, Var fused, bool trainable = true);
  std::vector<Parameter*> parameters();
};

/// Encoders Φ_m, attention gates, combination and fused head.
class FusionModel {
 public:
  struct Output {
    std::vector<Var> embeddings;  // h_m
    std::vector<Var> gated;       // h_m^*
    Var combined;                 // F (or stacked gated embeddings)
    Var fused_embedding;          // h_F
    Var risk;                     // θ_F, 1 × N
  };

  FusionModel() = default;
  /// Takes ownership of copies of the encoders (typically pretrained
  /// unimodal networks). Throws ConfigError if the count disagrees with
  /// config.modalities or embedding sizes differ from config.embedding.
  FusionModel(std::vector<Encoder> encoders, FusionConfig config, std::uint64_t seed);

  /// fuse_forward. `inputs[m]` holds modality m's feature columns, all with the
  /// same N. Encoder parameters enter the graph as constants when
  /// train_encoders is false.
  Output forward(Graph& g, std::span<const Var> inputs, bool train_encoders = true,
                 bool train_fusion = true);

  std::vector<double> predict(std::span<const Tensor> inputs);

  const FusionConfig& config() const { return config_; }
  std::vector<Encoder>& encoders() { return encoders_; }
  std::vector<Parameter*> encoder_parameters();
  std::vector<Parameter*> fusion_parameters();
  std::vector<Parameter*> parameters();

 private:
  FusionConfig config_;
  std::vector<Encoder> encoders_;
  std::vector<AttentionParams> gates_;
  FusionHead head_;
};

/// One row of the fusion-module ablation grid.
struct AblationVariant {
  std::string label;
  bool gating;
  CombineStrategy combine;
};

/// The four gating × combination variants; the first row (gating on, tensor
/// fusion) is the default model.
std::vector<AblationVariant> ablation_grid();

/// ablation_variant: `base` with gating/combination switched to `variant`.
FusionConfig ablation_variant(FusionConfig base, const AblationVariant& variant);

/// Correlation-fusion baseline: per-modality encoders whose equal-width
/// embeddings are averaged, then a highway stack and the bounded Cox head.
/// Trained with Cox loss plus similarity_loss().
class CorrelationFusionModel {
 public:
  struct Output {
    std::vector<Var> embeddings;
    Var averaged;
    Var risk;
  };

  CorrelationFusionModel() = default;
  CorrelationFusionModel(std::vector<Encoder> encoders, std::size_t highway_depth, std::uint64_t seed);

  Output forward(Graph& g, std::span<const Var> inputs, bool trainable = true);
  std::vector<double> predict(std::span<const Tensor> inputs);
  std::vector<Parameter*> parameters();

 private:
  struct HighwayLayer {
    DenseLayer transform;
    DenseLayer gate;
  };

  std::vector<Encoder> encoders_;
  std::vector<HighwayLayer> highway_;
  RiskHead risk_;
};

}  // namespace dof
