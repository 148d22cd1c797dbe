#include "dof/fusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "dof/common/errors.hpp"
#include "dof/common/rng.hpp"

namespace dof {

namespace {

Tensor uniform_matrix(std::size_t rows, std::size_t cols, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

void append(std::vector<Parameter*>& out, std::vector<Parameter*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

std::string_view combine_name(CombineStrategy c) {
  return c == CombineStrategy::kTensorFusion ? "tensor-fusion" : "concatenation";
}

std::size_t default_scaled_size(std::size_t modalities) {
  switch (modalities) {
    case 0:
    case 1: throw ConfigError("fusion needs at least two modalities");
    case 2: return 32;
    case 3: return 16;
    default: return 8;
  }
}

std::size_t FusionConfig::fused_width() const {
  const std::size_t l2 = scaled_size();
  if (combine == CombineStrategy::kConcatenation) return modalities * l2;
  std::size_t w = 1;
  for (std::size_t m = 0; m < modalities; ++m) w *= l2 + 1;
  return w;
}

void FusionConfig::validate() const {
  if (modalities < 2) throw ConfigError("fusion needs at least two modalities");
  if (embedding < 2) throw ConfigError("fusion: embedding size must be >= 2");
  if (scaled_size() == 0 || hidden == 0) throw ConfigError("fusion: widths must be positive");
}

AttentionParams::AttentionParams(const std::string& name, std::size_t embedding, std::size_t scaled,
                                 std::size_t modalities, std::uint64_t seed) {
  const std::size_t other_width = (modalities - 1) * embedding;
  wa = Parameter(name + ".WA", uniform_matrix(scaled * embedding, other_width, embedding * other_width,
                                              derive_seed(seed, 0)));
  ba = Parameter(name + ".bA", Tensor({scaled}));
  ws = Parameter(name + ".WS", uniform_matrix(scaled, embedding, embedding, derive_seed(seed, 1)));
  bs = Parameter(name + ".bS", Tensor({scaled}));
}

std::vector<Parameter*> AttentionParams::parameters() { return {&wa, &ba, &ws, &bs}; }

Var attention_gate(Graph& g, Var h, std::span<const Var> others, AttentionParams& params, bool gating,
                   bool trainable) {
  if (others.empty()) throw std::invalid_argument("attention_gate: gating needs at least one other modality");
  for (const Var& o : others) {
    if (g.value(o).cols() != g.value(h).cols()) {
      throw std::invalid_argument("attention_gate: embeddings cover different patient counts");
    }
  }
  const Var scaled = linear(h, g.parameter(params.ws, trainable), g.parameter(params.bs, trainable));
  if (!gating) return scaled;
  const Var stacked = concat_rows(others);
  const Var weights =
      sigmoid(bilinear(h, g.parameter(params.wa, trainable), stacked, g.parameter(params.ba, trainable)));
  return elementwise_mul(weights, scaled);
}

Var tensor_fuse(std::span<const Var> gated) {
  if (gated.empty()) throw std::invalid_argument("tensor_fuse: empty modality list");
  Graph& g = *gated.front().graph;
  const std::size_t modalities = gated.size();
  const std::size_t n = g.value(gated.front()).cols();
  std::vector<std::size_t> sides(modalities);
  std::vector<std::size_t> ids(modalities);
  std::size_t total = 1;
  for (std::size_t m = 0; m < modalities; ++m) {
    const Tensor& v = g.value(gated[m]);
    if (v.rank() != 2 || v.cols() != n) {
      throw std::invalid_argument("tensor_fuse: gated embeddings must be matrices with equal column counts");
    }
    sides[m] = v.rows() + 1;
    ids[m] = gated[m].id;
    total *= sides[m];
  }

  // Rows of the augmented embeddings [1; v_m]; row 0 is all ones.
  const std::vector<double> ones(n, 1.0);
  auto aug_row = [&ones, n](const Tensor& v, std::size_t d) {
    return d == 0 ? ones.data() : v.data().data() + (d - 1) * n;
  };

  std::vector<const Tensor*> values(modalities);
  for (std::size_t m = 0; m < modalities; ++m) values[m] = &g.value(gated[m]);
  Tensor out = Tensor::matrix(total, n);
  {
    // prefix[m] = product of the first m factors of the current row.
    std::vector<std::vector<double>> prefix(modalities + 1, ones);
    std::vector<std::size_t> digit(modalities, 0);
    std::size_t dirty = 0;
    double* o = out.data().data();
    for (std::size_t r = 0; r < total; ++r) {
      for (std::size_t m = dirty; m < modalities; ++m) {
        const double* a = aug_row(*values[m], digit[m]);
        for (std::size_t c = 0; c < n; ++c) prefix[m + 1][c] = prefix[m][c] * a[c];
      }
      std::copy(prefix[modalities].begin(), prefix[modalities].end(), o + r * n);
      for (std::size_t m = modalities; m-- > 0;) {
        dirty = m;
        if (++digit[m] < sides[m]) break;
        digit[m] = 0;
      }
    }
  }

  return g.record(std::move(out), ids, [ids, sides, total](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const std::size_t modalities = ids.size();
    const std::size_t n = go.cols();
    const std::vector<double> ones(n, 1.0);
    std::vector<const Tensor*> values(modalities);
    std::vector<double*> grads(modalities, nullptr);
    for (std::size_t m = 0; m < modalities; ++m) {
      values[m] = &g.value(ids[m]);
      if (g.requires_grad(ids[m])) grads[m] = g.grad_buffer(ids[m]).data().data();
    }
    auto aug_row = [&](std::size_t m, std::size_t d) {
      return d == 0 ? ones.data() : values[m]->data().data() + (d - 1) * n;
    };
    std::vector<std::vector<double>> prefix(modalities + 1, ones), suffix(modalities + 1, ones);
    std::vector<std::size_t> digit(modalities, 0);
    std::size_t dirty = 0;
    const double* gop = go.data().data();
    for (std::size_t r = 0; r < total; ++r) {
      for (std::size_t m = dirty; m < modalities; ++m) {
        const double* a = aug_row(m, digit[m]);
        for (std::size_t c = 0; c < n; ++c) prefix[m + 1][c] = prefix[m][c] * a[c];
      }
      for (std::size_t m = modalities; m-- > 1;) {
        const double* a = aug_row(m, digit[m]);
        for (std::size_t c = 0; c < n; ++c) suffix[m][c] = suffix[m + 1][c] * a[c];
      }
      const double* gr = gop + r * n;
      for (std::size_t m = 0; m < modalities; ++m) {
        if (grads[m] == nullptr || digit[m] == 0) continue;
        double* dst = grads[m] + (digit[m] - 1) * n;
        const double* p = prefix[m].data();
        const double* s = suffix[m + 1].data();
        for (std::size_t c = 0; c < n; ++c) dst[c] += gr[c] * p[c] * s[c];
      }
      for (std::size_t m = modalities; m-- > 0;) {
        dirty = m;
        if (++digit[m] < sides[m]) break;
        digit[m] = 0;
      }
    }
  });
}

FusionHead::FusionHead(std::size_t input_width, const FusionConfig& config, std::uint64_t seed)
    : activation(config.head_activation) {
  std::size_t in = input_width;
  for (std::size_t i = 0; i < config.head_layers; ++i) {
    layers.emplace_back("fusion.head" + std::to_string(i), in, config.hidden, derive_seed(seed, i));
    in = config.hidden;
  }
  risk = RiskHead("fusion.risk", in, derive_seed(seed, 1000));
}

std::pair<Var, Var> FusionHead::forward(Graph& g, Var fused, bool trainable) {
  Var x = fused;
  for (DenseLayer& l : layers) x = dof::activation(l.forward(g, x, trainable), activation);
  return {x, risk.forward(g, x, trainable)};
}

std::vector<Parameter*> FusionHead::parameters() {
  std::vector<Parameter*> out;
  for (DenseLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&risk.beta);
  out.push_back(&risk.bias);
  return out;
}

FusionModel::FusionModel(std::vector<Encoder> encoders, FusionConfig config, std::uint64_t seed)
    : config_(config), encoders_(std::move(encoders)) {
  config_.validate();
  if (encoders_.size() != config_.modalities) {
    throw ConfigError("fusion: config expects " + std::to_string(config_.modalities) + " modalities, got " +
                      std::to_string(encoders_.size()) + " encoders");
  }
  for (const Encoder& e : encoders_) {
    if (e.config().embedding != config_.embedding) {
      throw ConfigError("fusion: encoder " + e.config().modality + " embeds to " +
                        std::to_string(e.config().embedding) + ", expected " + std::to_string(config_.embedding));
    }
  }
  for (std::size_t m = 0; m < config_.modalities; ++m) {
    gates_.emplace_back("fusion.gate" + std::to_string(m), config_.embedding, config_.scaled_size(),
                        config_.modalities, derive_seed(seed, m));
  }
  head_ = FusionHead(config_.fused_width(), config_, derive_seed(seed, 100));
}

FusionModel::Output FusionModel::forward(Graph& g, std::span<const Var> inputs, bool train_encoders,
                                         bool train_fusion) {
  if (inputs.size() != encoders_.size()) {
    throw std::invalid_argument("fusion: expected " + std::to_string(encoders_.size()) + " modality inputs, got " +
                                std::to_string(inputs.size()));
  }
  Output out;
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    out.embeddings.push_back(encoders_[m].forward(g, inputs[m], train_encoders));
  }
  std::vector<Var> others;
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    others.clear();
    for (std::size_t o = 0; o < encoders_.size(); ++o) {
      if (o != m) others.push_back(out.embeddings[o]);
    }
    out.gated.push_back(attention_gate(g, out.embeddings[m], others, gates_[m], config_.gating, train_fusion));
  }
  out.combined = config_.combine == CombineStrategy::kTensorFusion ? tensor_fuse(out.gated)
                                                                    : concat_rows(out.gated);
  std::tie(out.fused_embedding, out.risk) = head_.forward(g, out.combined, train_fusion);
  return out;
}

std::vector<double> FusionModel::predict(std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  const Output out = forward(g, vars, false, false);
  const auto d = g.value(out.risk).data();
  return {d.begin(), d.end()};
}

std::vector<Parameter*> FusionModel::encoder_parameters() {
  std::vector<Parameter*> out;
  for (Encoder& e : encoders_) append(out, e.parameters());
  return out;
}

std::vector<Parameter*> FusionModel::fusion_parameters() {
  std::vector<Parameter*> out;
  for (AttentionParams& a : gates_) {
    if (config_.gating) {
      out.push_back(&a.wa);
      out.push_back(&a.ba);
    }
    out.push_back(&a.ws);
    out.push_back(&a.bs);
  }
  append(out, head_.parameters());
  return out;
}

std::vector<Parameter*> FusionModel::parameters() {
  std::vector<Parameter*> out = encoder_parameters();
  append(out, fusion_parameters());
  return out;
}

std::vector<AblationVariant> ablation_grid() {
  return {{"gating+tensor-fusion", true, CombineStrategy::kTensorFusion},
          {"no-gating+tensor-fusion", false, CombineStrategy::kTensorFusion},
          {"gating+concatenation", true, CombineStrategy::kConcatenation},
          {"no-gating+concatenation", false, CombineStrategy::kConcatenation}};
}

FusionConfig ablation_variant(FusionConfig base, const AblationVariant& variant) {
  base.gating = variant.gating;
  base.combine = variant.combine;
  return base;
}

CorrelationFusionModel::CorrelationFusionModel(std::vector<Encoder> encoders, std::size_t highway_depth,
                                               std::uint64_t seed)
    : encoders_(std::move(encoders)) {
  if (encoders_.size() < 2) throw ConfigError("correlation fusion needs at least two modalities");
  const std::size_t width = encoders_.front().config().embedding;
  for (const Encoder& e : encoders_) {
    if (e.config().embedding != width) throw ConfigError("correlation fusion: embedding widths differ");
  }
  for (std::size_t i = 0; i < highway_depth; ++i) {
    HighwayLayer layer{DenseLayer("corr.highway" + std::to_string(i) + ".H", width, width, derive_seed(seed, 2 * i)),
                       DenseLayer("corr.highway" + std::to_string(i) + ".T", width, width,
                                  derive_seed(seed, 2 * i + 1))};
    layer.gate.bias.value.fill(-1.0);
    highway_.push_back(std::move(layer));
  }
  risk_ = RiskHead("corr.risk", width, derive_seed(seed, 999));
}

CorrelationFusionModel::Output CorrelationFusionModel::forward(Graph& g, std::span<const Var> inputs,
                                                               bool trainable) {
  if (inputs.size() != encoders_.size()) throw std::invalid_argument("correlation fusion: modality count mismatch");
  Output out;
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    out.embeddings.push_back(encoders_[m].forward(g, inputs[m], trainable));
  }
  Var total = out.embeddings.front();
  for (std::size_t m = 1; m < out.embeddings.size(); ++m) total = add(total, out.embeddings[m]);
  out.averaged = scale(total, 1.0 / static_cast<double>(out.embeddings.size()));
  Var x = out.averaged;
  for (HighwayLayer& layer : highway_) {
    const Var transformed = relu(layer.transform.forward(g, x, trainable));
    const Var carry_gate = sigmoid(layer.gate.forward(g, x, trainable));
    x = add(x, elementwise_mul(carry_gate, sub(transformed, x)));
  }
  out.risk = risk_.forward(g, x, trainable);
  return out;
}

std::vector<double> CorrelationFusionModel::predict(std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  const Output out = forward(g, vars, false);
  const auto d = g.value(out.risk).data();
  return {d.begin(), d.end()};
}

std::vector<Parameter*> CorrelationFusionModel::parameters() {
  std::vector<Parameter*> out;
  for (Encoder& e : encoders_) append(out, e.parameters());
  for (HighwayLayer& l : highway_) {
    for (DenseLayer* d : {&l.transform, &l.gate}) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    }
  }
  out.push_back(&risk_.beta);
  out.push_back(&risk_.bias);
  return out;
}

}  // namespace dof
