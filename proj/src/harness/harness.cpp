#include "dof/harness/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dof/common/errors.hpp"
#include "dof/common/rng.hpp"
#include "dof/diffcore/optimizer.hpp"
#include "json.hpp"

namespace dof::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::size_t kPredictChunk = 2048;
const std::set<std::string> kModalityNames{"R", "P", "G", "C"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string gamma_text(double g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

// Every key of `obj` must be in `allowed`.
void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

CombineStrategy parse_combine(const std::string& s) {
  if (s == "tensor") return CombineStrategy::kTensorFusion;
  if (s == "concat") return CombineStrategy::kConcatenation;
  throw ConfigError("fusion.combine must be \"tensor\" or \"concat\", got \"" + s + "\"");
}

// Even minibatches: round(n / batch) chunks of near-equal size; batch 0 is
// the whole set.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch) {
  const std::size_t count = batch == 0 ? 1 : std::max<std::size_t>(1, (n + batch / 2) / batch);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < count; ++b) out.emplace_back(b * n / count, (b + 1) * n / count);
  return out;
}

Tensor gather(const synth::ModalityBlock& block, std::span<const std::size_t> columns) {
  Tensor out = Tensor::matrix(block.width(), columns.size());
  for (std::size_t r = 0; r < block.width(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out(r, c) = block.features(r, columns[c]);
  }
  return out;
}

double unimodal_lr(double lr0, std::size_t epoch, std::size_t epochs) {
  return lr0 * static_cast<double>(epochs - epoch) / static_cast<double>(epochs);
}

double fusion_lr(double lr0, std::size_t epoch, const FusionSettings& s, std::size_t epochs) {
  const std::size_t start = s.decay_start == 0 ? 0 : s.decay_start - 1;
  if (epoch < start) return lr0;
  return lr0 * static_cast<double>(epochs - epoch) / static_cast<double>(epochs - std::min(start, epochs - 1));
}

void check_finite(double v, const std::string& what, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw NumericError(what + ": non-finite loss at epoch " + std::to_string(epoch + 1));
  }
}

void adam_step(Adam& adam, std::span<Parameter* const> params, double lr, const std::string& what,
               std::size_t epoch) {
  try {
    adam.step(params, lr);
  } catch (const NumericError& e) {
    throw NumericError(what + ": epoch " + std::to_string(epoch + 1) + ": " + e.what());
  }
}

// Column indices of every sample combination of patient p, one list per
// modality, enumerated with the last modality varying fastest.
void append_combinations(const synth::Cohort& cohort, std::size_t p,
                         std::vector<std::vector<std::size_t>>& columns) {
  const std::size_t mods = cohort.modalities.size();
  std::vector<std::size_t> digit(mods, 0);
  for (;;) {
    for (std::size_t m = 0; m < mods; ++m) columns[m].push_back(cohort.modalities[m].offsets[p] + digit[m]);
    std::size_t m = mods;
    while (m-- > 0) {
      if (++digit[m] < cohort.modalities[m].samples(p)) break;
      digit[m] = 0;
    }
    if (m == static_cast<std::size_t>(-1)) return;
  }
}

template <typename PredictFn>
std::vector<double> predict_combinations(const synth::Cohort& cohort, PredictFn&& predict) {
  const std::size_t mods = cohort.modalities.size();
  std::vector<double> out(cohort.size());
  std::size_t p = 0;
  while (p < cohort.size()) {
    std::vector<std::vector<std::size_t>> columns(mods);
    std::vector<std::size_t> ends;
    const std::size_t first = p;
    while (p < cohort.size() && (columns[0].size() < kPredictChunk || p == first)) {
      append_combinations(cohort, p, columns);
      ends.push_back(columns[0].size());
      ++p;
    }
    std::vector<Tensor> inputs;
    for (std::size_t m = 0; m < mods; ++m) inputs.push_back(gather(cohort.modalities[m], columns[m]));
    const std::vector<double> theta = predict(inputs);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < ends.size(); ++i) {
      out[first + i] = aggregate_patient_risk(std::span(theta).subspan(begin, ends[i] - begin));
      begin = ends[i];
    }
  }
  return out;
}

// One random sample column per patient and modality.
std::vector<std::vector<std::size_t>> draw_columns(const synth::Cohort& cohort, std::span<const std::size_t> rows,
                                                   Rng& rng) {
  std::vector<std::vector<std::size_t>> cols(cohort.modalities.size());
  for (std::size_t m = 0; m < cohort.modalities.size(); ++m) {
    const synth::ModalityBlock& b = cohort.modalities[m];
    for (std::size_t p : rows) cols[m].push_back(b.offsets[p] + rng.below(b.samples(p)));
  }
  return cols;
}

ModelSummary summarize(const std::string& label, std::vector<double> c) {
  ModelSummary s;
  s.label = label;
  s.c_index = c;
  s.median = metrics::median(c);
  s.mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
  s.std = metrics::stddev(c);
  s.q25 = metrics::percentile(c, 0.25);
  s.q75 = metrics::percentile(c, 0.75);
  return s;
}

ordered_json test_json(const metrics::TestResult& t) {
  return {{"statistic", t.statistic}, {"p_value", t.p_value}, {"method", t.method}};
}

ordered_json hazard_json(const metrics::HazardRatio& h) {
  return {{"hr", h.hr}, {"log_hr", h.log_hr}, {"se", h.se}, {"ci_low", h.ci_low}, {"ci_high", h.ci_high},
          {"iterations", h.iterations}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  return os;
}

void write_km_pair(const std::filesystem::path& dir, std::span<const int> groups, const SurvivalBatch& surv) {
  for (int g : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i] == g) rows.push_back(i);
    }
    metrics::KmCurve curve;
    if (!rows.empty()) curve = metrics::km_estimate(surv.subset(rows));
    std::ofstream os = open_out(dir / (g == 0 ? "km_low.csv" : "km_high.csv"));
    metrics::write_km_csv(os, curve);
  }
}

// Log-rank and HR between the two risk groups; fields are left unset when a
// group is empty or the fit diverges.
void group_statistics(std::span<const int> groups, const SurvivalBatch& surv, ordered_json& out) {
  std::vector<std::size_t> low, high;
  for (std::size_t i = 0; i < groups.size(); ++i) (groups[i] ? high : low).push_back(i);
  out["groups"] = {{"low", low.size()}, {"high", high.size()}};
  if (low.empty() || high.empty()) return;
  out["log_rank"] = test_json(metrics::log_rank_test(surv.subset(low), surv.subset(high)));
  try {
    out["hazard_ratio"] = hazard_json(metrics::hazard_ratio(groups, surv));
  } catch (const NumericError& e) {
    out["hazard_ratio_error"] = e.what();
  }
}

ordered_json settings_json(const FusionSettings& f) {
  return {{"epochs", f.epochs},           {"freeze_epochs", f.freeze_epochs}, {"decay_start", f.decay_start},
          {"lr", f.lr},                   {"batch_size", f.batch_size},       {"weight_decay", f.weight_decay},
          {"hidden", f.hidden},
          {"head_layers", f.head_layers}, {"scaled", f.scaled},               {"gating", f.gating},
          {"combine", f.combine == CombineStrategy::kTensorFusion ? "tensor" : "concat"}};
}

ordered_json encoder_json(const EncoderConfig& c) {
  return {{"modality", c.modality},
          {"kind", std::string(encoder_kind_name(c.kind))},
          {"input_widths", c.input_widths},
          {"hidden", c.hidden},
          {"hidden_layers", c.hidden_layers},
          {"embedding", c.embedding}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c = make_encoder_config(j.at("modality").get<std::string>(),
                                        parse_encoder_kind(j.at("kind").get<std::string>()),
                                        j.at("input_widths").get<std::vector<std::size_t>>(),
                                        j.at("embedding").get<std::size_t>(), j.at("hidden").get<std::size_t>());
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (bundle.empty() && preset != "complementary" && preset != "redundant") {
    throw ConfigError("cohort.preset must be \"complementary\" or \"redundant\"");
  }
  if (bundle.empty() && patients < 10) throw ConfigError("cohort.patients must be at least 10");
  if (modalities.empty()) throw ConfigError("modalities: need at least one");
  std::set<std::string> seen;
  for (const std::string& m : modalities) {
    if (!kModalityNames.count(m)) throw ConfigError("modalities: unknown modality '" + m + "' (R, P, G or C)");
    if (!seen.insert(m).second) throw ConfigError("modalities: '" + m + "' listed twice");
  }
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("holdout must lie in (0, 1)");
  if (folds < 1) throw ConfigError("folds must be at least 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite value >= 0");
  if (unimodal.epochs < 1 || fusion.epochs < 1 || correlation.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(unimodal.lr > 0.0) || !(fusion.lr > 0.0) || !(correlation.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (unimodal.batch_size == 1 || fusion.batch_size == 1) {
    throw ConfigError("batch_size must be 0 (full fold) or >= 2");
  }
  if (unimodal.embedding < 2) throw ConfigError("unimodal.embedding must be >= 2");
  if (fusion.freeze_epochs > fusion.epochs) throw ConfigError("fusion.freeze_epochs exceeds fusion.epochs");
  if (fusion.decay_start < 1) throw ConfigError("fusion.decay_start is 1-based");
  if (!(unimodal.weight_decay >= 0.0) || !(fusion.weight_decay >= 0.0) || !(correlation.weight_decay >= 0.0)) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (!(correlation.similarity_weight >= 0.0)) throw ConfigError("correlation.similarity_weight must be >= 0");
  if (gamma_grid.empty()) throw ConfigError("gamma_grid: need at least one value");
  for (double g : gamma_grid) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma_grid values must be finite and >= 0");
  }
  if (censoring >= 1.0) throw ConfigError("cohort.censoring must be < 1");
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  check_keys(j,
             {"cohort", "modalities", "gamma", "folds", "holdout", "seed", "threads", "output_dir", "unimodal",
              "fusion", "correlation", "gamma_grid", "baselines"},
             "config");
  if (j.contains("cohort")) {
    const json& k = j["cohort"];
    check_keys(k, {"preset", "patients", "seed", "censoring", "bundle"}, "cohort");
    read(k, "preset", c.preset, "cohort");
    read(k, "patients", c.patients, "cohort");
    read(k, "seed", c.cohort_seed, "cohort");
    read(k, "censoring", c.censoring, "cohort");
    read(k, "bundle", c.bundle, "cohort");
  }
  read(j, "modalities", c.modalities, "config");
  read(j, "gamma", c.gamma, "config");
  read(j, "folds", c.folds, "config");
  read(j, "holdout", c.holdout, "config");
  read(j, "seed", c.seed, "config");
  read(j, "threads", c.threads, "config");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "gamma_grid", c.gamma_grid, "config");
  if (j.contains("unimodal")) {
    const json& u = j["unimodal"];
    check_keys(u, {"epochs", "lr", "batch_size", "weight_decay", "hidden", "hidden_layers", "embedding"},
               "unimodal");
    read(u, "epochs", c.unimodal.epochs, "unimodal");
    read(u, "lr", c.unimodal.lr, "unimodal");
    read(u, "batch_size", c.unimodal.batch_size, "unimodal");
    read(u, "weight_decay", c.unimodal.weight_decay, "unimodal");
    read(u, "hidden", c.unimodal.hidden, "unimodal");
    read(u, "hidden_layers", c.unimodal.hidden_layers, "unimodal");
    read(u, "embedding", c.unimodal.embedding, "unimodal");
  }
  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    check_keys(f,
               {"epochs", "freeze_epochs", "decay_start", "lr", "batch_size", "weight_decay", "hidden", "head_layers",
                "scaled", "gating", "combine"},
               "fusion");
    read(f, "epochs", c.fusion.epochs, "fusion");
    read(f, "freeze_epochs", c.fusion.freeze_epochs, "fusion");
    read(f, "decay_start", c.fusion.decay_start, "fusion");
    read(f, "lr", c.fusion.lr, "fusion");
    read(f, "batch_size", c.fusion.batch_size, "fusion");
    read(f, "weight_decay", c.fusion.weight_decay, "fusion");
    read(f, "hidden", c.fusion.hidden, "fusion");
    read(f, "head_layers", c.fusion.head_layers, "fusion");
    read(f, "scaled", c.fusion.scaled, "fusion");
    read(f, "gating", c.fusion.gating, "fusion");
    std::string combine = "tensor";
    read(f, "combine", combine, "fusion");
    c.fusion.combine = parse_combine(combine);
  }
  if (j.contains("correlation")) {
    const json& r = j["correlation"];
    check_keys(r, {"epochs", "lr", "weight_decay", "highway_depth", "similarity_weight"}, "correlation");
    read(r, "epochs", c.correlation.epochs, "correlation");
    read(r, "lr", c.correlation.lr, "correlation");
    read(r, "weight_decay", c.correlation.weight_decay, "correlation");
    read(r, "highway_depth", c.correlation.highway_depth, "correlation");
    read(r, "similarity_weight", c.correlation.similarity_weight, "correlation");
  }
  if (j.contains("baselines")) {
    const json& b = j["baselines"];
    check_keys(b, {"late_fusion", "correlation"}, "baselines");
    read(b, "late_fusion", c.late_fusion, "baselines");
    read(b, "correlation", c.correlation_baseline, "baselines");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  ordered_json j;
  ordered_json cohort{{"preset", preset}, {"patients", patients}, {"seed", cohort_seed}};
  if (censoring >= 0.0) cohort["censoring"] = censoring;
  if (!bundle.empty()) cohort["bundle"] = bundle;
  j["cohort"] = cohort;
  j["modalities"] = modalities;
  j["gamma"] = gamma;
  j["folds"] = folds;
  j["holdout"] = holdout;
  j["seed"] = seed;
  j["threads"] = threads;
  j["output_dir"] = output_dir;
  j["unimodal"] = {{"epochs", unimodal.epochs},         {"lr", unimodal.lr},
                   {"batch_size", unimodal.batch_size}, {"weight_decay", unimodal.weight_decay},
                   {"hidden", unimodal.hidden},
                   {"hidden_layers", unimodal.hidden_layers}, {"embedding", unimodal.embedding}};
  j["fusion"] = settings_json(fusion);
  j["correlation"] = {{"epochs", correlation.epochs},
                      {"lr", correlation.lr},
                      {"weight_decay", correlation.weight_decay},
                      {"highway_depth", correlation.highway_depth},
                      {"similarity_weight", correlation.similarity_weight}};
  j["gamma_grid"] = gamma_grid;
  j["baselines"] = {{"late_fusion", late_fusion}, {"correlation", correlation_baseline}};
  return j.dump(2);
}

synth::CohortSpec preset_spec(const ExperimentConfig& config) {
  synth::CohortSpec spec = config.preset == "redundant"
                               ? synth::redundant_preset(config.patients, config.cohort_seed)
                               : synth::complementary_preset(config.patients, config.cohort_seed);
  if (config.censoring >= 0.0) spec.censoring = config.censoring;
  return spec;
}

synth::Cohort load_cohort(const ExperimentConfig& config) {
  if (!config.bundle.empty()) return synth::read_bundle(config.bundle);
  return synth::generate(preset_spec(config)).cohort;
}

// ---------------------------------------------------------------------------
// Data handling

std::vector<Split> mc_splits(std::size_t patients, std::size_t folds, double fraction, std::uint64_t seed) {
  if (patients < 5) throw ConfigError("Monte Carlo splits need at least 5 patients");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  const auto test_size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(patients)));
  if (test_size == 0 || test_size >= patients) {
    throw ConfigError("holdout fraction leaves an empty train or test set");
  }
  std::vector<Split> out;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> perm(patients);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, f));
    rng.shuffle(perm);
    Split s;
    s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(test_size));
    s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(test_size), perm.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    out.push_back(std::move(s));
  }
  return out;
}

Standardizer Standardizer::fit(const synth::Cohort& train) {
  Standardizer s;
  for (const synth::ModalityBlock& b : train.modalities) {
    std::vector<double> mean(b.width()), scale(b.width());
    const double n = static_cast<double>(b.features.cols());
    for (std::size_t r = 0; r < b.width(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < b.features.cols(); ++c) total += b.features(r, c);
      const double mu = total / n;
      double ss = 0.0;
      for (std::size_t c = 0; c < b.features.cols(); ++c) {
        const double d = b.features(r, c) - mu;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / n);
      mean[r] = mu;
      scale[r] = sd > 1e-12 ? sd : 1.0;
    }
    s.mean.push_back(std::move(mean));
    s.scale.push_back(std::move(scale));
  }
  return s;
}

synth::Cohort Standardizer::apply(synth::Cohort cohort) const {
  if (cohort.modalities.size() != mean.size()) throw std::invalid_argument("standardizer: modality count mismatch");
  for (std::size_t m = 0; m < mean.size(); ++m) {
    synth::ModalityBlock& b = cohort.modalities[m];
    if (b.width() != mean[m].size()) throw std::invalid_argument("standardizer: width mismatch for " + b.name);
    for (std::size_t r = 0; r < b.width(); ++r) {
      for (std::size_t c = 0; c < b.features.cols(); ++c) {
        b.features(r, c) = (b.features(r, c) - mean[m][r]) / scale[m][r];
      }
    }
  }
  return cohort;
}

synth::Cohort select(const synth::Cohort& cohort, const std::vector<std::size_t>& rows,
                     const std::vector<std::string>& modalities) {
  synth::Cohort out;
  for (std::size_t p : rows) out.patient_ids.push_back(cohort.patient_ids.at(p));
  out.survival = cohort.survival.subset(rows);
  for (const std::string& name : modalities) {
    const synth::ModalityBlock& src = cohort.modalities[cohort.modality_index(name)];
    synth::ModalityBlock b;
    b.name = src.name;
    b.kind = src.kind;
    b.branch_widths = src.branch_widths;
    b.offsets.assign(1, 0);
    std::vector<std::size_t> cols;
    for (std::size_t p : rows) {
      for (std::size_t c = src.offsets[p]; c < src.offsets[p + 1]; ++c) cols.push_back(c);
      b.offsets.push_back(cols.size());
    }
    b.features = gather(src, cols);
    out.modalities.push_back(std::move(b));
  }
  return out;
}

double aggregate_patient_risk(std::span<const double> theta) {
  if (theta.empty()) throw std::invalid_argument("aggregate_patient_risk: no combinations");
  return metrics::percentile(std::vector<double>(theta.begin(), theta.end()), 0.75);
}

std::vector<double> naive_late_fusion(const std::vector<std::vector<double>>& per_modality) {
  if (per_modality.size() < 2) throw std::invalid_argument("naive_late_fusion: need at least two modalities");
  const std::size_t n = per_modality.front().size();
  std::vector<double> out(n, 0.0);
  for (const auto& scores : per_modality) {
    if (scores.size() != n) throw std::invalid_argument("naive_late_fusion: score vectors differ in length");
    for (std::size_t i = 0; i < n; ++i) out[i] += scores[i];
  }
  for (double& v : out) v /= static_cast<double>(per_modality.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training

EncoderConfig encoder_config(const synth::ModalityBlock& block, const UnimodalSettings& settings) {
  EncoderConfig c = make_encoder_config(block.name, parse_encoder_kind(block.kind), block.branch_widths,
                                        settings.embedding, settings.hidden);
  c.hidden_layers = settings.hidden_layers;
  c.validate();
  return c;
}

TrainedUnimodal train_unimodal(const synth::Cohort& train, std::size_t modality, const UnimodalSettings& settings,
                               std::uint64_t seed) {
  const synth::ModalityBlock& block = train.modalities.at(modality);
  const std::string what = "unimodal " + block.name;
  if (train.survival.event_count() == 0) throw ConfigError(what + ": training set has no events");
  TrainedUnimodal out{UnimodalModel(encoder_config(block, settings), derive_seed(seed, 1)), {}};
  const std::vector<Parameter*> params = out.model.parameters();
  Adam adam(AdamConfig{.weight_decay = settings.weight_decay});
  Rng rng(derive_seed(seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLog log;
    log.lr = unimodal_lr(settings.lr, e, settings.epochs);
    rng.shuffle(order);
    std::size_t steps = 0;
    for (const auto& [b0, b1] : batches(order.size(), settings.batch_size)) {
      const std::span<const std::size_t> rows(order.data() + b0, b1 - b0);
      const SurvivalBatch surv = train.survival.subset(rows);
      if (surv.event_count() == 0) continue;
      const auto cols = draw_columns(train, rows, rng);
      Graph g;
      const Var x = g.constant(gather(block, cols[modality]));
      const Var theta = out.model.forward(g, x, true).second;
      const Var loss = cox_pl_loss(theta, surv);
      const double lv = loss.value().item();
      check_finite(lv, what, e);
      g.backward(loss);
      adam_step(adam, params, log.lr, what, e);
      log.loss += lv;
      log.cox += lv;
      ++steps;
    }
    if (steps) {
      log.loss /= static_cast<double>(steps);
      log.cox /= static_cast<double>(steps);
    }
    out.log.push_back(log);
  }
  return out;
}

TrainedFusion train_fusion(const std::vector<const Encoder*>& encoders, const synth::Cohort& train,
                           const FusionSettings& settings, double gamma, std::uint64_t seed) {
  if (encoders.size() != train.modalities.size()) {
    throw std::invalid_argument("train_fusion: one encoder per cohort modality required");
  }
  if (train.survival.event_count() == 0) throw ConfigError("fusion: training set has no events");
  std::vector<Encoder> copies;
  for (const Encoder* e : encoders) copies.push_back(*e);
  FusionConfig fc;
  fc.modalities = encoders.size();
  fc.embedding = copies.front().config().embedding;
  fc.scaled = settings.scaled;
  fc.hidden = settings.hidden;
  fc.head_layers = settings.head_layers;
  fc.gating = settings.gating;
  fc.combine = settings.combine;
  TrainedFusion out{FusionModel(std::move(copies), fc, derive_seed(seed, 1)), {}};
  const std::vector<Parameter*> fusion_only = out.model.fusion_parameters();
  const std::vector<Parameter*> all = out.model.parameters();
  Adam adam(AdamConfig{.weight_decay = settings.weight_decay});
  Rng rng(derive_seed(seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLog log;
    log.lr = fusion_lr(settings.lr, e, settings, settings.epochs);
    log.frozen = e < settings.freeze_epochs;
    rng.shuffle(order);
    std::size_t steps = 0;
    for (const auto& [b0, b1] : batches(order.size(), settings.batch_size)) {
      const std::span<const std::size_t> rows(order.data() + b0, b1 - b0);
      const SurvivalBatch surv = train.survival.subset(rows);
      if (surv.event_count() == 0) continue;
      const auto cols = draw_columns(train, rows, rng);
      Graph g;
      std::vector<Var> inputs;
      for (std::size_t m = 0; m < train.modalities.size(); ++m) {
        inputs.push_back(g.constant(gather(train.modalities[m], cols[m])));
      }
      const FusionModel::Output o = out.model.forward(g, inputs, !log.frozen, true);
      const CombinedLoss loss = combined_loss(o.risk, surv, o.embeddings, gamma);
      const double lv = loss.total.value().item();
      check_finite(lv, "fusion", e);
      g.backward(loss.total);
      adam_step(adam, log.frozen ? fusion_only : all, log.lr, "fusion", e);
      log.loss += lv;
      log.cox += loss.cox.value().item();
      if (loss.has_mmo) log.mmo += loss.mmo.value().item();
      ++steps;
    }
    if (steps) {
      const double inv = 1.0 / static_cast<double>(steps);
      log.loss *= inv;
      log.cox *= inv;
      log.mmo *= inv;
    }
    out.log.push_back(log);
  }
  return out;
}

TrainedCorrelation correlation_fusion_baseline(const std::vector<const Encoder*>& encoders,
                                               const synth::Cohort& train, const CorrelationSettings& settings,
                                               const FusionSettings& schedule, std::uint64_t seed) {
  if (encoders.size() < 2) throw ConfigError("correlation fusion needs at least two modalities");
  if (encoders.size() != train.modalities.size()) {
    throw std::invalid_argument("correlation fusion: one encoder per cohort modality required");
  }
  if (train.survival.event_count() == 0) throw ConfigError("correlation fusion: training set has no events");
  std::vector<Encoder> copies;
  for (const Encoder* e : encoders) copies.push_back(*e);
  TrainedCorrelation out{CorrelationFusionModel(std::move(copies), settings.highway_depth, derive_seed(seed, 1)),
                         {}};
  const std::vector<Parameter*> params = out.model.parameters();
  Adam adam(AdamConfig{.weight_decay = settings.weight_decay});
  Rng rng(derive_seed(seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLog log;
    log.lr = fusion_lr(settings.lr, e, schedule, settings.epochs);
    rng.shuffle(order);
    std::size_t steps = 0;
    for (const auto& [b0, b1] : batches(order.size(), schedule.batch_size)) {
      const std::span<const std::size_t> rows(order.data() + b0, b1 - b0);
      const SurvivalBatch surv = train.survival.subset(rows);
      if (surv.event_count() == 0) continue;
      const auto cols = draw_columns(train, rows, rng);
      Graph g;
      std::vector<Var> inputs;
      for (std::size_t m = 0; m < train.modalities.size(); ++m) {
        inputs.push_back(g.constant(gather(train.modalities[m], cols[m])));
      }
      const CorrelationFusionModel::Output o = out.model.forward(g, inputs, true);
      const Var cox = cox_pl_loss(o.risk, surv);
      const Var total = add(cox, scale(similarity_loss(o.embeddings), settings.similarity_weight));
      const double lv = total.value().item();
      check_finite(lv, "correlation fusion", e);
      g.backward(total);
      adam_step(adam, params, log.lr, "correlation fusion", e);
      log.loss += lv;
      log.cox += cox.value().item();
      ++steps;
    }
    if (steps) {
      log.loss /= static_cast<double>(steps);
      log.cox /= static_cast<double>(steps);
    }
    out.log.push_back(log);
  }
  return out;
}

std::vector<double> predict_unimodal(UnimodalModel& model, const synth::ModalityBlock& block) {
  const std::size_t n = block.offsets.size() - 1;
  std::vector<double> theta;
  for (std::size_t c0 = 0; c0 < block.features.cols(); c0 += kPredictChunk) {
    const std::size_t c1 = std::min(block.features.cols(), c0 + kPredictChunk);
    std::vector<std::size_t> cols(c1 - c0);
    std::iota(cols.begin(), cols.end(), c0);
    const std::vector<double> part = model.predict(gather(block, cols));
    theta.insert(theta.end(), part.begin(), part.end());
  }
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    out[p] = aggregate_patient_risk(std::span(theta).subspan(block.offsets[p], block.samples(p)));
  }
  return out;
}

std::vector<double> predict_fusion(FusionModel& model, const synth::Cohort& cohort) {
  return predict_combinations(cohort, [&](std::span<const Tensor> inputs) { return model.predict(inputs); });
}

std::vector<double> predict_correlation(CorrelationFusionModel& model, const synth::Cohort& cohort) {
  return predict_combinations(cohort, [&](std::span<const Tensor> inputs) { return model.predict(inputs); });
}

// ---------------------------------------------------------------------------
// Model grids

std::vector<ModelSpec> standard_models(const ExperimentConfig& config) {
  std::vector<ModelSpec> out;
  for (const std::string& m : config.modalities) out.push_back({"uni_" + m, ModelKind::kUnimodal, {m}});
  if (config.modalities.size() < 2) return out;
  const FusionSettings& f = config.fusion;
  if (config.gamma > 0.0) {
    out.push_back({"fusion_g0", ModelKind::kFusion, config.modalities, 0.0, f.gating, f.combine});
  }
  out.push_back({"dof", ModelKind::kFusion, config.modalities, config.gamma, f.gating, f.combine});
  if (config.late_fusion) out.push_back({"late", ModelKind::kLateFusion, config.modalities});
  if (config.correlation_baseline) out.push_back({"corr", ModelKind::kCorrelation, config.modalities});
  return out;
}

std::vector<ModelSpec> gamma_sweep_models(const ExperimentConfig& config) {
  if (config.modalities.size() < 2) throw ConfigError("gamma sweep needs at least two modalities");
  std::vector<ModelSpec> out;
  for (double g : config.gamma_grid) {
    out.push_back({"dof_g" + gamma_text(g), ModelKind::kFusion, config.modalities, g, config.fusion.gating,
                   config.fusion.combine});
  }
  return out;
}

std::vector<ModelSpec> ablation_models(const ExperimentConfig& config) {
  if (config.modalities.size() < 2) throw ConfigError("ablation needs at least two modalities");
  std::vector<ModelSpec> out;
  for (const AblationVariant& v : ablation_grid()) {
    out.push_back({v.label, ModelKind::kFusion, config.modalities, config.gamma, v.gating, v.combine});
  }
  return out;
}

std::vector<ModelSpec> table1_models(const ExperimentConfig& config) {
  std::vector<ModelSpec> out;
  const std::size_t m = config.modalities.size();
  for (std::size_t size = 1; size <= m; ++size) {
    for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
      std::vector<std::string> mods;
      for (std::size_t i = 0; i < m; ++i) {
        if (mask & (std::size_t{1} << i)) mods.push_back(config.modalities[i]);
      }
      const std::string name = join(mods, "+");
      if (size == 1) {
        out.push_back({"uni_" + name, ModelKind::kUnimodal, mods});
        continue;
      }
      out.push_back({name + " g=0", ModelKind::kFusion, mods, 0.0, config.fusion.gating, config.fusion.combine});
      if (config.gamma > 0.0) {
        out.push_back({name + " g=" + gamma_text(config.gamma), ModelKind::kFusion, mods, config.gamma,
                       config.fusion.gating, config.fusion.combine});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

const ModelSummary& ExperimentResult::summary(const std::string& label) const {
  for (const ModelSummary& s : summaries) {
    if (s.label == label) return s;
  }
  throw std::out_of_range("no model labelled " + label);
}

namespace {

FoldOutcome run_fold(const synth::Cohort& cohort, const ExperimentConfig& config,
                     const std::vector<ModelSpec>& models, const Split& split, std::size_t fold,
                     const ProgressFn& progress) {
  std::vector<std::string> used;
  for (const ModelSpec& spec : models) {
    for (const std::string& m : spec.modalities) {
      if (std::find(used.begin(), used.end(), m) == used.end()) used.push_back(m);
    }
  }
  synth::Cohort train = select(cohort, split.train, used);
  synth::Cohort test = select(cohort, split.test, used);
  const Standardizer standardizer = Standardizer::fit(train);
  train = standardizer.apply(std::move(train));
  test = standardizer.apply(std::move(test));
  const std::uint64_t fold_seed = derive_seed(config.seed, fold);
  const std::string tag = "fold " + std::to_string(fold + 1) + ": ";

  std::map<std::string, TrainedUnimodal> unimodal;
  std::map<std::string, std::vector<double>> unimodal_risk;
  for (std::size_t m = 0; m < used.size(); ++m) {
    unimodal.emplace(used[m], train_unimodal(train, m, config.unimodal, derive_seed(fold_seed, fnv1a("uni:" + used[m]))));
    unimodal_risk[used[m]] = predict_unimodal(unimodal.at(used[m]).model, test.modalities[m]);
    if (progress) progress(tag + "unimodal " + used[m]);
  }

  FoldOutcome out;
  for (const ModelSpec& spec : models) {
    std::vector<double> risk;
    std::vector<const Encoder*> encoders;
    for (const std::string& m : spec.modalities) encoders.push_back(&unimodal.at(m).model.encoder);
    const std::vector<std::size_t> all_train = [&] {
      std::vector<std::size_t> r(train.size());
      std::iota(r.begin(), r.end(), 0);
      return r;
    }();
    const std::vector<std::size_t> all_test = [&] {
      std::vector<std::size_t> r(test.size());
      std::iota(r.begin(), r.end(), 0);
      return r;
    }();
    const std::uint64_t seed = derive_seed(fold_seed, fnv1a("fusion:" + join(spec.modalities, "+")));
    switch (spec.kind) {
      case ModelKind::kUnimodal:
        risk = unimodal_risk.at(spec.modalities.front());
        out.logs[spec.label] = unimodal.at(spec.modalities.front()).log;
        break;
      case ModelKind::kLateFusion: {
        std::vector<std::vector<double>> parts;
        for (const std::string& m : spec.modalities) parts.push_back(unimodal_risk.at(m));
        risk = naive_late_fusion(parts);
        break;
      }
      case ModelKind::kFusion: {
        FusionSettings s = config.fusion;
        s.gating = spec.gating;
        s.combine = spec.combine;
        TrainedFusion t = train_fusion(encoders, select(train, all_train, spec.modalities), s, spec.gamma, seed);
        risk = predict_fusion(t.model, select(test, all_test, spec.modalities));
        out.logs[spec.label] = std::move(t.log);
        break;
      }
      case ModelKind::kCorrelation: {
        TrainedCorrelation t = correlation_fusion_baseline(encoders, select(train, all_train, spec.modalities),
                                                           config.correlation, config.fusion, seed);
        risk = predict_correlation(t.model, select(test, all_test, spec.modalities));
        out.logs[spec.label] = std::move(t.log);
        break;
      }
    }
    out.c_index[spec.label] = metrics::concordance_index(risk, test.survival);
    out.risk[spec.label] = std::move(risk);
    if (progress) progress(tag + spec.label);
  }
  return out;
}

}  // namespace

ExperimentResult run_cv(const synth::Cohort& cohort, const ExperimentConfig& config,
                        const std::vector<ModelSpec>& models, const std::string& primary,
                        const ProgressFn& progress) {
  config.validate();
  if (models.empty()) throw ConfigError("no models to evaluate");
  ExperimentResult result;
  std::set<std::string> labels;
  for (const ModelSpec& m : models) {
    if (!labels.insert(m.label).second) throw ConfigError("duplicate model label " + m.label);
    result.labels.push_back(m.label);
  }
  if (!labels.count(primary)) throw ConfigError("primary model " + primary + " is not in the model list");
  result.primary = primary;
  result.splits = mc_splits(cohort.size(), config.folds, config.holdout, config.seed);
  result.folds.resize(config.folds);

  std::vector<std::exception_ptr> errors(config.folds);
  std::mutex progress_mutex;
  const ProgressFn locked = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    progress(msg);
  };
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < config.folds; f = next++) {
      try {
        result.folds[f] = run_fold(cohort, config, models, result.splits[f], f, locked);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  std::size_t workers = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, config.folds);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (std::size_t f = 0; f < errors.size(); ++f) {
    if (!errors[f]) continue;
    const std::string tag = "fold " + std::to_string(f + 1) + ": ";
    try {
      std::rethrow_exception(errors[f]);
    } catch (const NumericError& e) {
      throw NumericError(tag + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(tag + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(tag + e.what());
    }
  }

  for (const std::string& label : result.labels) {
    std::vector<double> c;
    for (const FoldOutcome& f : result.folds) c.push_back(f.c_index.at(label));
    result.summaries.push_back(summarize(label, std::move(c)));
  }
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const std::vector<double>& risk = result.folds[f].risk.at(primary);
    for (std::size_t i = 0; i < risk.size(); ++i) {
      const std::size_t p = result.splits[f].test[i];
      result.pooled_risk.push_back(risk[i]);
      result.pooled_survival.time.push_back(cohort.survival.time[p]);
      result.pooled_survival.event.push_back(cohort.survival.event[p]);
    }
  }
  result.pooled_groups = metrics::assign_risk_groups(result.pooled_risk);
  std::vector<std::size_t> low, high;
  for (std::size_t i = 0; i < result.pooled_groups.size(); ++i) (result.pooled_groups[i] ? high : low).push_back(i);
  if (!low.empty()) result.km_low = metrics::km_estimate(result.pooled_survival.subset(low));
  if (!high.empty()) result.km_high = metrics::km_estimate(result.pooled_survival.subset(high));
  result.has_groups = !low.empty() && !high.empty();
  if (result.has_groups) {
    result.log_rank = metrics::log_rank_test(result.pooled_survival.subset(low), result.pooled_survival.subset(high));
    try {
      result.hazard = metrics::hazard_ratio(result.pooled_groups, result.pooled_survival);
      result.has_hazard = true;
    } catch (const NumericError&) {
      result.has_hazard = false;
    }
  }
  const ModelSummary& p = result.summary(primary);
  if (config.folds >= 2) {
    for (const ModelSummary& s : result.summaries) {
      if (s.label != primary) result.comparisons[s.label] = metrics::mann_whitney_u(p.c_index, s.c_index);
    }
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  const synth::Cohort cohort = load_cohort(config);
  const std::vector<ModelSpec> models = standard_models(config);
  const std::string primary = config.modalities.size() >= 2 ? "dof" : models.front().label;
  return run_cv(cohort, config, models, primary, progress);
}

// ---------------------------------------------------------------------------
// Output files

void write_result(const std::filesystem::path& dir, const ExperimentResult& result, const synth::Cohort& cohort,
                  const ExperimentConfig& config) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os = open_out(dir / "folds.csv");
    os << "fold,model,c_index\n";
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
      for (const std::string& label : result.labels) {
        os << (f + 1) << ',' << label << ',' << result.folds[f].c_index.at(label) << '\n';
      }
    }
  }
  {
    std::ofstream os = open_out(dir / "risk_scores.csv");
    os << "model,fold,patient,time,event,risk,group\n";
    for (const std::string& label : result.labels) {
      for (std::size_t f = 0; f < result.folds.size(); ++f) {
        const std::vector<double>& risk = result.folds[f].risk.at(label);
        for (std::size_t i = 0; i < risk.size(); ++i) {
          const std::size_t p = result.splits[f].test[i];
          os << label << ',' << (f + 1) << ',' << cohort.patient_ids[p] << ',' << cohort.survival.time[p] << ','
             << cohort.survival.event[p] << ',' << risk[i] << ',' << (risk[i] > 0.0 ? "high" : "low") << '\n';
        }
      }
    }
  }
  {
    std::ofstream lo = open_out(dir / "km_low.csv");
    metrics::write_km_csv(lo, result.km_low);
    std::ofstream hi = open_out(dir / "km_high.csv");
    metrics::write_km_csv(hi, result.km_high);
  }
  ordered_json j;
  j["primary"] = result.primary;
  j["folds"] = result.folds.size();
  j["models"] = ordered_json::array();
  for (const ModelSummary& s : result.summaries) {
    j["models"].push_back({{"label", s.label},
                           {"c_index", s.c_index},
                           {"median", s.median},
                           {"mean", s.mean},
                           {"std", s.std},
                           {"q25", s.q25},
                           {"q75", s.q75},
                           {"iqr", s.q75 - s.q25}});
  }
  ordered_json pooled;
  pooled["patients"] = result.pooled_risk.size();
  std::size_t high = 0;
  for (int g : result.pooled_groups) high += g;
  pooled["groups"] = {{"low", result.pooled_groups.size() - high}, {"high", high}};
  if (result.has_groups) pooled["log_rank"] = test_json(result.log_rank);
  if (result.has_hazard) pooled["hazard_ratio"] = hazard_json(result.hazard);
  j["pooled"] = pooled;
  j["comparisons"] = ordered_json::array();
  for (const std::string& label : result.labels) {
    const auto it = result.comparisons.find(label);
    if (it == result.comparisons.end()) continue;
    j["comparisons"].push_back({{"a", result.primary},
                                {"b", label},
                                {"u", it->second.statistic},
                                {"p_value", it->second.p_value},
                                {"method", it->second.method}});
  }
  j["config"] = ordered_json::parse(config.to_json_text());
  std::ofstream os = open_out(dir / "summary.json");
  os << j.dump(2) << '\n';
}

void write_gamma_table(const std::filesystem::path& path, const ExperimentResult& result,
                       const ExperimentConfig& config) {
  std::ofstream os = open_out(path);
  os << "gamma,median,std,q25,q75\n";
  for (double g : config.gamma_grid) {
    const ModelSummary& s = result.summary("dof_g" + gamma_text(g));
    os << gamma_text(g) << ',' << s.median << ',' << s.std << ',' << s.q25 << ',' << s.q75 << '\n';
  }
}

void write_ablation_table(const std::filesystem::path& path, const ExperimentResult& result) {
  std::ofstream os = open_out(path);
  os << "variant,gating,combination,median,std,q25,q75\n";
  for (const AblationVariant& v : ablation_grid()) {
    const ModelSummary& s = result.summary(v.label);
    os << v.label << ',' << (v.gating ? "yes" : "no") << ',' << combine_name(v.combine) << ',' << s.median << ','
       << s.std << ',' << s.q25 << ',' << s.q75 << '\n';
  }
}

void write_table1(const std::filesystem::path& path, const ExperimentResult& result,
                  const std::vector<ModelSpec>& models) {
  std::ofstream os = open_out(path);
  os << "modalities,gamma,median,std,q25,q75\n";
  for (const ModelSpec& m : models) {
    const ModelSummary& s = result.summary(m.label);
    os << join(m.modalities, "+") << ',' << (m.kind == ModelKind::kUnimodal ? "" : gamma_text(m.gamma)) << ','
       << s.median << ',' << s.std << ',' << s.q25 << ',' << s.q75 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Whole-cohort models

FinalModels train_final(const synth::Cohort& cohort, const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  if (config.modalities.size() < 2) throw ConfigError("train: fusion needs at least two modalities");
  FinalModels out;
  out.modalities = config.modalities;
  out.gamma = config.gamma;
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  synth::Cohort train = select(cohort, rows, config.modalities);
  out.standardizer = Standardizer::fit(train);
  train = out.standardizer.apply(std::move(train));
  const std::uint64_t seed = derive_seed(config.seed, 0xF17A1);
  for (std::size_t m = 0; m < config.modalities.size(); ++m) {
    out.unimodal.push_back(
        train_unimodal(train, m, config.unimodal, derive_seed(seed, fnv1a("uni:" + config.modalities[m]))));
    if (progress) progress("unimodal " + config.modalities[m]);
  }
  std::vector<const Encoder*> encoders;
  for (TrainedUnimodal& u : out.unimodal) encoders.push_back(&u.model.encoder);
  out.fusion = train_fusion(encoders, train, config.fusion, config.gamma,
                            derive_seed(seed, fnv1a("fusion:" + join(config.modalities, "+"))));
  if (progress) progress("fusion");
  return out;
}

void save_final(const std::filesystem::path& dir, FinalModels& models) {
  std::filesystem::create_directories(dir);
  ordered_json st;
  st["modalities"] = models.modalities;
  st["mean"] = models.standardizer.mean;
  st["scale"] = models.standardizer.scale;
  {
    std::ofstream os = open_out(dir / "standardizer.json");
    os << st.dump(2) << '\n';
  }
  ordered_json encoders = ordered_json::array();
  for (TrainedUnimodal& u : models.unimodal) {
    const ordered_json meta{{"kind", "unimodal"}, {"encoder", encoder_json(u.model.encoder.config())}};
    const std::vector<Parameter*> params = u.model.parameters();
    save_checkpoint(dir / ("unimodal_" + u.model.encoder.config().modality + ".json"), params, meta.dump());
    encoders.push_back(encoder_json(u.model.encoder.config()));
  }
  const FusionConfig& fc = models.fusion.model.config();
  ordered_json meta{{"kind", "fusion"},
                    {"gamma", models.gamma},
                    {"encoders", encoders},
                    {"fusion",
                     {{"modalities", fc.modalities},
                      {"embedding", fc.embedding},
                      {"scaled", fc.scaled},
                      {"hidden", fc.hidden},
                      {"head_layers", fc.head_layers},
                      {"gating", fc.gating},
                      {"combine", fc.combine == CombineStrategy::kTensorFusion ? "tensor" : "concat"}}}};
  const std::vector<Parameter*> params = models.fusion.model.parameters();
  save_checkpoint(dir / "dof.json", params, meta.dump());

  std::ofstream os = open_out(dir / "training_log.csv");
  os << "model,epoch,lr,loss,cox,mmo,frozen\n";
  auto dump = [&](const std::string& label, const std::vector<EpochLog>& log) {
    for (std::size_t e = 0; e < log.size(); ++e) {
      os << label << ',' << (e + 1) << ',' << log[e].lr << ',' << log[e].loss << ',' << log[e].cox << ','
         << log[e].mmo << ',' << (log[e].frozen ? 1 : 0) << '\n';
    }
  };
  for (TrainedUnimodal& u : models.unimodal) dump("uni_" + u.model.encoder.config().modality, u.log);
  dump("dof", models.fusion.log);
}

FinalModels load_final(const std::filesystem::path& dir) {
  FinalModels out;
  try {
    std::ifstream is(dir / "standardizer.json");
    if (!is) throw ConfigError("no standardizer.json in " + dir.string());
    const json st = json::parse(is);
    out.modalities = st.at("modalities").get<std::vector<std::string>>();
    out.standardizer.mean = st.at("mean").get<std::vector<std::vector<double>>>();
    out.standardizer.scale = st.at("scale").get<std::vector<std::vector<double>>>();

    std::ifstream ds(dir / "dof.json");
    if (!ds) throw ConfigError("no dof.json in " + dir.string());
    const json meta = json::parse(ds).at("meta");
    out.gamma = meta.at("gamma").get<double>();
    std::vector<Encoder> encoders;
    for (const json& e : meta.at("encoders")) {
      EncoderConfig c = encoder_from_json(e);
      UnimodalModel u(c, 0);
      const std::vector<Parameter*> params = u.parameters();
      load_checkpoint(dir / ("unimodal_" + c.modality + ".json"), params);
      out.unimodal.push_back({std::move(u), {}});
      encoders.emplace_back(c, 0);
    }
    const json& f = meta.at("fusion");
    FusionConfig fc;
    fc.modalities = f.at("modalities").get<std::size_t>();
    fc.embedding = f.at("embedding").get<std::size_t>();
    fc.scaled = f.at("scaled").get<std::size_t>();
    fc.hidden = f.at("hidden").get<std::size_t>();
    fc.head_layers = f.at("head_layers").get<std::size_t>();
    fc.gating = f.at("gating").get<bool>();
    fc.combine = parse_combine(f.at("combine").get<std::string>());
    out.fusion.model = FusionModel(std::move(encoders), fc, 0);
    const std::vector<Parameter*> params = out.fusion.model.parameters();
    load_checkpoint(dir / "dof.json", params);
  } catch (const json::exception& e) {
    throw ConfigError("model directory " + dir.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model directory " + dir.string() + ": " + e.what());
  }
  return out;
}

Evaluation evaluate_final(FinalModels& models, const synth::Cohort& cohort, const std::filesystem::path& dir) {
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  const synth::Cohort data = models.standardizer.apply(select(cohort, rows, models.modalities));
  Evaluation ev;
  ev.risk = predict_fusion(models.fusion.model, data);
  ev.groups = metrics::assign_risk_groups(ev.risk);
  ev.c_index = metrics::concordance_index(ev.risk, data.survival);

  std::filesystem::create_directories(dir);
  {
    std::ofstream os = open_out(dir / "risk_scores.csv");
    os << "model,fold,patient,time,event,risk,group\n";
    for (std::size_t p = 0; p < cohort.size(); ++p) {
      os << "dof,0," << cohort.patient_ids[p] << ',' << cohort.survival.time[p] << ',' << cohort.survival.event[p]
         << ',' << ev.risk[p] << ',' << (ev.groups[p] ? "high" : "low") << '\n';
    }
  }
  write_km_pair(dir, ev.groups, data.survival);
  ordered_json j;
  j["model"] = "dof";
  j["patients"] = cohort.size();
  j["c_index"] = ev.c_index;
  ordered_json stats;
  group_statistics(ev.groups, data.survival, stats);
  j["pooled"] = stats;
  std::ofstream os = open_out(dir / "summary.json");
  os << j.dump(2) << '\n';
  return ev;
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
  const std::filesystem::path p(dir);
  const char* root = std::getenv("DOF_OUTPUT_ROOT");
  if (root && *root && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace dof::harness
