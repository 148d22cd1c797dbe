#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dof/fusion/fusion.hpp"
#include "dof/losses/losses.hpp"
#include "dof/metrics/metrics.hpp"
#include "dof/synthdata/synthdata.hpp"

namespace dof::harness {

struct UnimodalSettings {
  std::size_t epochs = 50;
  double lr = 2e-4;
  std::size_t batch_size = 0;  // 0 = whole training fold
  double weight_decay = 0.0;
  std::size_t hidden = 128;
  std::size_t hidden_layers = 2;
  std::size_t embedding = 32;
};

struct FusionSettings {
  std::size_t epochs = 30;
  std::size_t freeze_epochs = 5;
  std::size_t decay_start = 10;  // 1-based epoch where linear decay begins
  double lr = 1e-3;
  std::size_t batch_size = 0;
  double weight_decay = 0.0;
  std::size_t hidden = 128;
  std::size_t head_layers = 2;
  std::size_t scaled = 0;  // l2; 0 picks the default for the modality count
  bool gating = true;
  CombineStrategy combine = CombineStrategy::kTensorFusion;
};

struct CorrelationSettings {
  std::size_t epochs = 30;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t highway_depth = 10;
  double similarity_weight = 0.1;
};

/// Experiment configuration, read from JSON. Every key is optional:
///   {"cohort": {"preset": "complementary"|"redundant", "patients": 400, "seed": 1,
///               "censoring": 0.3, "bundle": "path/to/bundle"},
///    "modalities": ["R", "P", "G"], "gamma": 0.5, "folds": 15, "holdout": 0.2,
///    "seed": 7, "threads": 0, "output_dir": "run",
///    "unimodal": {"epochs", "lr", "batch_size", "weight_decay", "hidden", "hidden_layers",
///                 "embedding"},
///    "fusion": {"epochs", "freeze_epochs", "decay_start", "lr", "batch_size", "weight_decay",
///               "hidden", "head_layers", "scaled", "gating", "combine": "tensor"|"concat"},
///    "correlation": {"epochs", "lr", "weight_decay", "highway_depth", "similarity_weight"},
///    "gamma_grid": [0, 0.1, 0.25, 0.5, 1, 2.5],
///    "baselines": {"late_fusion": true, "correlation": true}}
/// A "bundle" path replaces the preset cohort.
struct ExperimentConfig {
  std::string preset = "complementary";
  std::size_t patients = 400;
  std::uint64_t cohort_seed = 1;
  double censoring = -1.0;  // < 0 keeps the preset's target
  std::string bundle;

  std::vector<std::string> modalities{"R", "P", "G"};
  double gamma = 0.5;
  std::size_t folds = 15;
  double holdout = 0.2;
  std::uint64_t seed = 7;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "run";

  UnimodalSettings unimodal;
  FusionSettings fusion;
  CorrelationSettings correlation;
  std::vector<double> gamma_grid{0.0, 0.1, 0.25, 0.5, 1.0, 2.5};
  bool late_fusion = true;
  bool correlation_baseline = true;

  /// Throws ConfigError.
  void validate() const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

/// Cohort described by the config (generated preset or CSV bundle).
synth::Cohort load_cohort(const ExperimentConfig& config);
synth::CohortSpec preset_spec(const ExperimentConfig& config);

struct Split {
  std::vector<std::size_t> train;  // sorted patient indices
  std::vector<std::size_t> test;
};

/// Monte Carlo splits: fold k shuffles 0..N−1 with a seed derived from (seed, k)
/// and holds out the first round(fraction·N). Throws ConfigError when N < 5 or
/// either side would be empty.
std::vector<Split> mc_splits(std::size_t patients, std::size_t folds, double fraction, std::uint64_t seed);

/// Per-feature z-scoring with statistics from training samples only.
struct Standardizer {
  std::vector<std::vector<double>> mean, scale;  // per modality, per feature

  static Standardizer fit(const synth::Cohort& train);
  synth::Cohort apply(synth::Cohort cohort) const;
};

/// Patients `rows` of a cohort, modalities restricted to `modalities` (by name).
synth::Cohort select(const synth::Cohort& cohort, const std::vector<std::size_t>& rows,
                     const std::vector<std::string>& modalities);

/// Linear-interpolation 75th percentile of a patient's per-combination θ.
double aggregate_patient_risk(std::span<const double> theta);

/// Arithmetic mean of the unimodal scores; throws std::invalid_argument for
/// fewer than two modalities or ragged inputs.
std::vector<double> naive_late_fusion(const std::vector<std::vector<double>>& per_modality);

struct EpochLog {
  double lr = 0.0;
  double loss = 0.0;  // mean minibatch total
  double cox = 0.0;
  double mmo = 0.0;   // mean minibatch MMO term (0 when γ = 0)
  bool frozen = false;
};

struct TrainedUnimodal {
  UnimodalModel model;
  std::vector<EpochLog> log;
};

struct TrainedFusion {
  FusionModel model;
  std::vector<EpochLog> log;
};

struct TrainedCorrelation {
  CorrelationFusionModel model;
  std::vector<EpochLog> log;
};

/// Encoder config for a cohort modality under the unimodal settings.
EncoderConfig encoder_config(const synth::ModalityBlock& block, const UnimodalSettings& settings);

/// Adam over minibatches (batch_size 0: one batch per epoch) for `epochs` with lr decaying linearly, lr·(E−e)/E at
/// 0-based epoch e. Each epoch draws one sample per patient. Throws
/// ConfigError without events and NumericError("... epoch k") on NaN.
TrainedUnimodal train_unimodal(const synth::Cohort& train, std::size_t modality,
                               const UnimodalSettings& settings, std::uint64_t seed);

/// Fusion training on top of copies of the given encoders. Epochs before
/// freeze_epochs update fusion parameters only; the lr is constant until
/// decay_start and then decays linearly. Each epoch draws one sample
/// combination per patient.
TrainedFusion train_fusion(const std::vector<const Encoder*>& encoders, const synth::Cohort& train,
                           const FusionSettings& settings, double gamma, std::uint64_t seed);

/// Correlation-fusion baseline: encoders initialized from the given ones,
/// averaged embeddings, highway stack; loss = Cox + weight·similarity.
TrainedCorrelation correlation_fusion_baseline(const std::vector<const Encoder*>& encoders,
                                               const synth::Cohort& train,
                                               const CorrelationSettings& settings,
                                               const FusionSettings& schedule, std::uint64_t seed);

/// Patient-level θ for every patient in `cohort` (test fold), aggregating all
/// sample combinations. Modality order of `cohort` must match the model's.
std::vector<double> predict_unimodal(UnimodalModel& model, const synth::ModalityBlock& block);
std::vector<double> predict_fusion(FusionModel& model, const synth::Cohort& cohort);
std::vector<double> predict_correlation(CorrelationFusionModel& model, const synth::Cohort& cohort);

enum class ModelKind { kUnimodal, kFusion, kLateFusion, kCorrelation };

struct ModelSpec {
  std::string label;
  ModelKind kind = ModelKind::kFusion;
  std::vector<std::string> modalities;
  double gamma = 0.0;
  bool gating = true;
  CombineStrategy combine = CombineStrategy::kTensorFusion;
};

/// Unimodal per modality, fusion at γ = 0, DOF at config γ and the enabled
/// baselines. The DOF row is labelled "dof".
std::vector<ModelSpec> standard_models(const ExperimentConfig& config);
/// DOF at each γ of the grid ("dof_g<γ>").
std::vector<ModelSpec> gamma_sweep_models(const ExperimentConfig& config);
/// The four ablation variants at config γ, labelled by ablation_grid().
std::vector<ModelSpec> ablation_models(const ExperimentConfig& config);
/// Every modality subset: unimodal rows, and fusion at γ = 0 and config γ.
std::vector<ModelSpec> table1_models(const ExperimentConfig& config);

struct FoldOutcome {
  std::map<std::string, double> c_index;
  std::map<std::string, std::vector<double>> risk;  // per test patient, in split order
  std::map<std::string, std::vector<EpochLog>> logs;
};

struct ModelSummary {
  std::string label;
  std::vector<double> c_index;  // per fold
  double median = 0.0, mean = 0.0, std = 0.0, q25 = 0.0, q75 = 0.0;
};

struct ExperimentResult {
  std::vector<std::string> labels;  // model order
  std::vector<Split> splits;
  std::vector<FoldOutcome> folds;
  std::vector<ModelSummary> summaries;
  std::string primary;
  // Pooled validation predictions of the primary model.
  std::vector<double> pooled_risk;
  SurvivalBatch pooled_survival;
  std::vector<int> pooled_groups;
  metrics::KmCurve km_low, km_high;
  bool has_groups = false;  // both risk groups non-empty
  metrics::TestResult log_rank{};
  metrics::HazardRatio hazard{};
  bool has_hazard = false;
  std::map<std::string, metrics::TestResult> comparisons;  // primary vs label

  const ModelSummary& summary(const std::string& label) const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Cross-validated training/evaluation of `models` on `cohort`. Folds run on
/// config.threads workers; results do not depend on the worker count. A fold
/// failure rethrows with the fold id in the message.
ExperimentResult run_cv(const synth::Cohort& cohort, const ExperimentConfig& config,
                        const std::vector<ModelSpec>& models, const std::string& primary,
                        const ProgressFn& progress = {});

/// load_cohort + run_cv with standard_models.
ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

/// Writes folds.csv, risk_scores.csv, km_low.csv, km_high.csv, summary.json.
void write_result(const std::filesystem::path& dir, const ExperimentResult& result,
                  const synth::Cohort& cohort, const ExperimentConfig& config);

/// γ, median, std, q25, q75 per sweep row.
void write_gamma_table(const std::filesystem::path& path, const ExperimentResult& result,
                       const ExperimentConfig& config);
/// variant, gating, combination, median, std, q25, q75.
void write_ablation_table(const std::filesystem::path& path, const ExperimentResult& result);
/// modalities, gamma, median, std, q25, q75 (Table-1 layout).
void write_table1(const std::filesystem::path& path, const ExperimentResult& result,
                  const std::vector<ModelSpec>& models);

/// Models fitted on a whole cohort (CLI `train`), reloadable for `evaluate`.
struct FinalModels {
  std::vector<std::string> modalities;
  Standardizer standardizer;
  std::vector<TrainedUnimodal> unimodal;
  TrainedFusion fusion;
  double gamma = 0.0;
};

FinalModels train_final(const synth::Cohort& cohort, const ExperimentConfig& config,
                        const ProgressFn& progress = {});
/// standardizer.json, unimodal_<m>.json and dof.json checkpoints plus
/// training_log.csv.
void save_final(const std::filesystem::path& dir, FinalModels& models);
/// Throws ConfigError on missing or mismatched files.
FinalModels load_final(const std::filesystem::path& dir);

struct Evaluation {
  std::vector<double> risk;
  std::vector<int> groups;
  double c_index = 0.0;
};

/// Scores every patient of `cohort` with the fused model and writes
/// risk_scores.csv, km_low.csv, km_high.csv and summary.json to `dir`.
Evaluation evaluate_final(FinalModels& models, const synth::Cohort& cohort, const std::filesystem::path& dir);

/// Output directory: $DOF_OUTPUT_ROOT/<dir> when the variable is set and
/// `dir` is relative, else `dir`.
std::filesystem::path resolve_output_dir(const std::string& dir);

}  // namespace dof::harness
