#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dof/diffcore/ops.hpp"

namespace dof {

enum class EncoderKind {
  kMlp,        // relu feed-forward stack
  kSnn,        // self-normalizing (selu) stack for genomic / clinical tables
  kRadiology,  // two sequence branches + handcrafted branch
};

std::string_view encoder_kind_name(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct EncoderConfig {
  std::string modality;
  EncoderKind kind = EncoderKind::kMlp;
  /// One width for kMlp/kSnn; {sequence 1, sequence 2, handcrafted} for kRadiology.
  std::vector<std::size_t> input_widths;
  std::size_t hidden = 128;
  std::size_t hidden_layers = 2;
  std::size_t embedding = 32;  // l1
  /// Defaults to selu for kSnn and relu otherwise.
  Activation activation = Activation::kRelu;

  /// Throws ConfigError unless l1 ≥ 2, all widths are positive and the
  /// branch count fits the kind.
  void validate() const;
  std::size_t input_width() const;
};

/// Config with the kind's default activation.
EncoderConfig make_encoder_config(std::string modality, EncoderKind kind,
                                  std::vector<std::size_t> input_widths, std::size_t embedding = 32,
                                  std::size_t hidden = 128);

/// Fully connected layer, weights drawn uniformly from ±sqrt(3 / fan_in) and
/// zero bias.
struct DenseLayer {
  Parameter weight;
  Parameter bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);
  Var forward(Graph& g, Var x, bool trainable);
  std::size_t in_width() const { return weight.value.cols(); }
  std::size_t out_width() const { return weight.value.rows(); }
};

/// Modality network Φ_m: raw feature columns (input_width × N) → embedding
/// (l1 × N). Every layer, including the embedding layer, applies the
/// configured activation.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, std::uint64_t seed);

  Var forward(Graph& g, Var x, bool trainable = true);
  Tensor embed(const Tensor& x);

  const EncoderConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();

 private:
  Var stack(Graph& g, std::vector<DenseLayer>& layers, Var x, bool trainable);

  EncoderConfig config_;
  std::vector<DenseLayer> trunk_;
  // Radiology branches.
  std::vector<DenseLayer> seq1_;
  std::vector<DenseLayer> seq2_;
  std::vector<DenseLayer> seq_merge_;
  std::vector<DenseLayer> handcrafted_;
};

/// Bounded Cox head: θ = −3 + 6·sigmoid(βᵀh + b), one value per column.
struct RiskHead {
  Parameter beta;  // 1 × l1
  Parameter bias;  // 1

  RiskHead() = default;
  RiskHead(const std::string& name, std::size_t width, std::uint64_t seed);
  Var forward(Graph& g, Var h, bool trainable = true);
};

inline constexpr double kRiskBound = 3.0;

/// −3 + 6·sigmoid(z) on a logit node.
Var bounded_risk(Var logit);

struct UnimodalModel {
  Encoder encoder;
  RiskHead head;

  UnimodalModel() = default;
  UnimodalModel(EncoderConfig config, std::uint64_t seed);

  /// Returns {embedding, θ (1×N)}.
  std::pair<Var, Var> forward(Graph& g, Var x, bool trainable = true);
  std::vector<double> predict(const Tensor& x);
  std::vector<Parameter*> parameters();
};

/// mlp_encode: embed columns of `x` with a freshly built graph.
Tensor mlp_encode(Encoder& encoder, const Tensor& x);

/// radiology_featurenet: stacks the three branch batches (same N) and embeds.
/// Throws std::invalid_argument when the branch column counts differ.
Tensor radiology_featurenet(Encoder& encoder, const Tensor& seq1, const Tensor& seq2,
                            const Tensor& handcrafted);

// Checkpoints: JSON document
//   {"format": "dof-checkpoint", "version": 1, "meta": {...},
//    "parameters": [{"name": str, "shape": [int...], "data": [float...]}, ...]}
// Values are written with round-trip precision.
void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     const std::string& meta_json = "{}");
/// Loads values by name; every listed parameter must be present with the same
/// shape. Returns the "meta" object serialized as JSON text.
std::string load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

}  // namespace dof
