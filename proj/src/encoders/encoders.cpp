#include "dof/encoders/encoders.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dof/common/errors.hpp"
#include "dof/common/rng.hpp"
#include "json.hpp"

namespace dof {

namespace {

Tensor uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::string_view encoder_kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kMlp: return "mlp";
    case EncoderKind::kSnn: return "snn";
    case EncoderKind::kRadiology: return "radiology";
  }
  return "unknown";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "mlp") return EncoderKind::kMlp;
  if (name == "snn") return EncoderKind::kSnn;
  if (name == "radiology") return EncoderKind::kRadiology;
  throw ConfigError("unknown encoder kind: " + std::string(name));
}

void EncoderConfig::validate() const {
  if (embedding < 2) throw ConfigError("encoder " + modality + ": embedding size must be >= 2");
  if (hidden == 0) throw ConfigError("encoder " + modality + ": hidden width must be positive");
  const std::size_t branches = kind == EncoderKind::kRadiology ? 3 : 1;
  if (input_widths.size() != branches) {
    throw ConfigError("encoder " + modality + ": expected " + std::to_string(branches) +
                      " input widths, got " + std::to_string(input_widths.size()));
  }
  for (std::size_t w : input_widths) {
    if (w == 0) throw ConfigError("encoder " + modality + ": input widths must be positive");
  }
  if (kind != EncoderKind::kRadiology && hidden_layers == 0) {
    throw ConfigError("encoder " + modality + ": need at least one hidden layer");
  }
}

std::size_t EncoderConfig::input_width() const {
  std::size_t s = 0;
  for (std::size_t w : input_widths) s += w;
  return s;
}

EncoderConfig make_encoder_config(std::string modality, EncoderKind kind,
                                  std::vector<std::size_t> input_widths, std::size_t embedding,
                                  std::size_t hidden) {
  EncoderConfig c;
  c.modality = std::move(modality);
  c.kind = kind;
  c.input_widths = std::move(input_widths);
  c.embedding = embedding;
  c.hidden = hidden;
  c.activation = kind == EncoderKind::kSnn ? Activation::kSelu : Activation::kRelu;
  return c;
}

DenseLayer::DenseLayer(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed)
    : weight(name + ".W", uniform_init(out, in, in, seed)), bias(name + ".b", Tensor({out})) {}

Var DenseLayer::forward(Graph& g, Var x, bool trainable) {
  return linear(x, g.parameter(weight, trainable), g.parameter(bias, trainable));
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const std::string base = config_.modality + ".enc";
  const std::size_t h = config_.hidden;
  std::uint64_t stream = 0;
  auto layer = [&](const std::string& name, std::size_t in, std::size_t out) {
    return DenseLayer(base + "." + name, in, out, derive_seed(seed, stream++));
  };
  if (config_.kind == EncoderKind::kRadiology) {
    seq1_.push_back(layer("seq1", config_.input_widths[0], h));
    seq2_.push_back(layer("seq2", config_.input_widths[1], h));
    seq_merge_.push_back(layer("seq_merge", 2 * h, h));
    handcrafted_.push_back(layer("handcrafted", config_.input_widths[2], h));
    trunk_.push_back(layer("trunk0", 2 * h, h));
    trunk_.push_back(layer("trunk1", h, h));
    trunk_.push_back(layer("embed", h, config_.embedding));
  } else {
    std::size_t in = config_.input_widths[0];
    for (std::size_t i = 0; i < config_.hidden_layers; ++i) {
      trunk_.push_back(layer("hidden" + std::to_string(i), in, h));
      in = h;
    }
    trunk_.push_back(layer("embed", in, config_.embedding));
  }
}

Var Encoder::stack(Graph& g, std::vector<DenseLayer>& layers, Var x, bool trainable) {
  for (DenseLayer& l : layers) x = activation(l.forward(g, x, trainable), config_.activation);
  return x;
}

Var Encoder::forward(Graph& g, Var x, bool trainable) {
  const Tensor& xv = g.value(x);
  if (xv.rank() != 2 || xv.rows() != config_.input_width()) {
    throw std::invalid_argument("encoder " + config_.modality + ": expected " +
                                std::to_string(config_.input_width()) + " input rows, got " +
                                shape_string(xv.shape()));
  }
  if (config_.kind != EncoderKind::kRadiology) return stack(g, trunk_, x, trainable);

  const std::size_t w1 = config_.input_widths[0], w2 = config_.input_widths[1],
                    w3 = config_.input_widths[2];
  const Var s1 = stack(g, seq1_, slice_rows(x, 0, w1), trainable);
  const Var s2 = stack(g, seq2_, slice_rows(x, w1, w2), trainable);
  const Var seqs[] = {s1, s2};
  const Var merged = stack(g, seq_merge_, concat_rows(seqs), trainable);
  const Var hand = stack(g, handcrafted_, slice_rows(x, w1 + w2, w3), trainable);
  const Var both[] = {merged, hand};
  return stack(g, trunk_, concat_rows(both), trainable);
}

Tensor Encoder::embed(const Tensor& x) {
  Graph g;
  return g.value(forward(g, g.constant(x), false));
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  for (auto* group : {&seq1_, &seq2_, &seq_merge_, &handcrafted_, &trunk_}) {
    for (DenseLayer& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

RiskHead::RiskHead(const std::string& name, std::size_t width, std::uint64_t seed)
    : beta(name + ".beta", uniform_init(1, width, width, seed)), bias(name + ".bias", Tensor({1})) {}

Var RiskHead::forward(Graph& g, Var h, bool trainable) {
  return bounded_risk(linear(h, g.parameter(beta, trainable), g.parameter(bias, trainable)));
}

Var bounded_risk(Var logit) { return add_scalar(scale(sigmoid(logit), 2.0 * kRiskBound), -kRiskBound); }

UnimodalModel::UnimodalModel(EncoderConfig config, std::uint64_t seed)
    : encoder(config, derive_seed(seed, 1)),
      head(config.modality + ".head", config.embedding, derive_seed(seed, 2)) {}

std::pair<Var, Var> UnimodalModel::forward(Graph& g, Var x, bool trainable) {
  const Var h = encoder.forward(g, x, trainable);
  return {h, head.forward(g, h, trainable)};
}

std::vector<double> UnimodalModel::predict(const Tensor& x) {
  Graph g;
  const auto [h, theta] = forward(g, g.constant(x), false);
  const auto d = g.value(theta).data();
  return {d.begin(), d.end()};
}

std::vector<Parameter*> UnimodalModel::parameters() {
  std::vector<Parameter*> out = encoder.parameters();
  out.push_back(&head.beta);
  out.push_back(&head.bias);
  return out;
}

Tensor mlp_encode(Encoder& encoder, const Tensor& x) { return encoder.embed(x); }

Tensor radiology_featurenet(Encoder& encoder, const Tensor& seq1, const Tensor& seq2,
                            const Tensor& handcrafted) {
  if (encoder.config().kind != EncoderKind::kRadiology) {
    throw std::invalid_argument("radiology_featurenet: encoder is not a radiology network");
  }
  if (seq1.cols() != seq2.cols() || seq1.cols() != handcrafted.cols()) {
    throw std::invalid_argument("radiology_featurenet: branch batches cover different patient counts");
  }
  Graph g;
  const Var parts[] = {g.constant(seq1), g.constant(seq2), g.constant(handcrafted)};
  return g.value(encoder.forward(g, concat_rows(parts), false));
}

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     const std::string& meta_json) {
  nlohmann::ordered_json doc;
  doc["format"] = "dof-checkpoint";
  doc["version"] = 1;
  doc["meta"] = nlohmann::ordered_json::parse(meta_json);
  auto& list = doc["parameters"] = nlohmann::ordered_json::array();
  for (const Parameter* p : params) {
    list.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"data", p->value.storage()}});
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  os << doc.dump(1) << '\n';
}

std::string load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  const nlohmann::json doc = nlohmann::json::parse(is);
  if (doc.value("format", "") != "dof-checkpoint" || doc.value("version", 0) != 1) {
    throw std::runtime_error("load_checkpoint: not a version-1 dof checkpoint: " + path.string());
  }
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& entry : doc.at("parameters")) by_name[entry.at("name").get<std::string>()] = &entry;
  for (Parameter* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("load_checkpoint: missing parameter " + p->name);
    Shape shape = it->second->at("shape").get<Shape>();
    std::vector<double> data = it->second->at("data").get<std::vector<double>>();
    Tensor t(std::move(shape), std::move(data));
    if (!t.same_shape(p->value)) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + p->name + ": " +
                               shape_string(t.shape()) + " vs " + shape_string(p->value.shape()));
    }
    p->value = std::move(t);
    p->zero_grad();
  }
  return doc.contains("meta") ? doc["meta"].dump() : "{}";
}

}  // namespace dof
