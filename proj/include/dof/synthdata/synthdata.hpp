#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dof/diffcore/tensor.hpp"
#include "dof/losses/losses.hpp"

namespace dof::synth {

/// One modality of a synthetic cohort. Each feature j is
///   x_j = offset_j + scale_j · (a_j·shared_loading·z_shared + b_j·unique_loading·z_m + noise·ε_j)
/// with a_j, b_j drawn from [0.5, 1.5]. Extra samples of a patient add
/// sample_jitter·ε to the patient's base vector.
struct ModalitySpec {
  std::string name;
  std::string kind = "mlp";  // encoder kind: mlp, snn or radiology
  /// Sub-blocks of the feature vector; {width} unless kind is radiology, in
  /// which case {sequence 1, sequence 2, handcrafted}.
  std::vector<std::size_t> branch_widths;
  double shared_loading = 0.3;
  double unique_loading = 1.0;
  double noise = 1.0;
  std::size_t min_samples = 1;
  std::size_t max_samples = 1;
  double sample_jitter = 0.2;

  std::size_t width() const;
};

struct CohortSpec {
  std::size_t patients = 400;
  std::vector<ModalitySpec> modalities;
  /// Risk r = beta_shared·z_shared + Σ_m beta_unique[m]·z_m.
  double beta_shared = 0.5;
  std::vector<double> beta_unique;
  double baseline_hazard = 0.1;  // λ₀
  double censoring = 0.3;        // target fraction of censored patients
  std::uint64_t seed = 1;

  /// Latent component count: one shared plus one per modality.
  std::size_t latent_count() const { return 1 + modalities.size(); }
  /// Throws ConfigError: N ≥ 10, censoring ∈ [0, 1), one beta per modality,
  /// widths ≥ latent count, 1 ≤ min_samples ≤ max_samples.
  void validate() const;
};

/// Features of one modality: all samples of all patients as columns of a
/// width × total_samples matrix; patient p owns columns
/// [offsets[p], offsets[p + 1]).
struct ModalityBlock {
  std::string name;
  std::string kind;
  std::vector<std::size_t> branch_widths;
  Tensor features;
  std::vector<std::size_t> offsets;

  std::size_t width() const { return features.rows(); }
  std::size_t samples(std::size_t patient) const { return offsets[patient + 1] - offsets[patient]; }
  /// Column of one sample as a width × 1 matrix.
  Tensor sample(std::size_t patient, std::size_t k) const;
};

/// Training-facing view: features and outcomes only.
struct Cohort {
  std::vector<std::string> patient_ids;
  std::vector<ModalityBlock> modalities;
  SurvivalBatch survival;

  std::size_t size() const { return survival.size(); }
  /// Index of the modality called `name`; throws ConfigError if absent.
  std::size_t modality_index(const std::string& name) const;
  /// Throws std::invalid_argument on inconsistent sizes or offsets.
  void validate() const;
};

/// Quantities that never enter training: latent draws and true risk.
struct HiddenTruth {
  std::vector<double> risk;
  Tensor latent;  // latent_count × N, row 0 shared
  std::vector<double> event_time;
  std::vector<double> censor_time;
  double censor_scale = 0.0;  // c of Uniform(0, c); +inf without censoring
};

struct GeneratedCohort {
  Cohort cohort;
  HiddenTruth truth;
};

/// Draws a cohort. Patients are independent streams keyed by derived seeds,
/// so generation is split across threads without changing the result.
/// Throws ConfigError when no censoring scale reaches the target within ±2%.
GeneratedCohort generate(const CohortSpec& spec);

/// M = 3 cohort (R radiology with 4 samples, P 1-3 samples, G one sample)
/// where each modality sees its own risk component and a weak shared one.
CohortSpec complementary_preset(std::size_t patients = 400, std::uint64_t seed = 1);

/// All modalities load only on the shared component, which carries the risk.
CohortSpec redundant_preset(std::size_t patients = 400, std::uint64_t seed = 1);

/// Risk explained by the latent components a subset of modalities observes
/// (always including the shared one), noise-free.
std::vector<double> latent_oracle_risk(const CohortSpec& spec, const HiddenTruth& truth,
                                       const std::vector<std::size_t>& modalities);

/// Mean of each patient's samples, width × N.
Tensor patient_means(const ModalityBlock& block);

// CSV bundle in one directory:
//   cohort.json           {"format":"dof-cohort","version":1,"patients":N,
//                          "modalities":[{"name","kind","branch_widths","file"}]}
//   outcomes.csv          patient,time,event
//   modality_<name>.csv   patient,sample,f1,...,fW   (one row per sample)
// Hidden truth is written only by write_truth_csv (truth.csv: patient,risk,z0..).
void write_bundle(const std::filesystem::path& dir, const Cohort& cohort);
Cohort read_bundle(const std::filesystem::path& dir);
void write_truth_csv(const std::filesystem::path& path, const Cohort& cohort, const HiddenTruth& truth);

}  // namespace dof::synth
