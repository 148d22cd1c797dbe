#pragma once

#include <span>
#include <vector>

#include "dof/diffcore/ops.hpp"

namespace dof {

/// Follow-up time and event indicator per patient.
struct SurvivalBatch {
  std::vector<double> time;  // > 0
  std::vector<int> event;    // 1 = event observed, 0 = censored

  std::size_t size() const { return time.size(); }
  /// Throws std::invalid_argument unless lengths agree, t > 0 and E ∈ {0,1}.
  void validate() const;
  SurvivalBatch subset(std::span<const std::size_t> rows) const;
  std::size_t event_count() const;
};

struct CoxLossInfo {
  bool no_events = false;  // set when every patient is censored; loss is 0
  std::size_t events = 0;
};

/// Negative Cox log partial likelihood over a 1×N (or N) risk-score node:
///   L = −Σ_{i: E_i=1} [θ_i − log Σ_{j: t_j ≥ t_i} exp θ_j]
/// Tied times share a risk set (Breslow). The inner sums use a global max
/// shift. An all-censored batch yields 0 and sets info->no_events.
Var cox_pl_loss(Var theta, const SurvivalBatch& surv, CoxLossInfo* info = nullptr);

struct MmoOptions {
  /// Scale the whole difference by 1/(M·N); otherwise only the per-modality
  /// sum is scaled (literal typeset reading, kept for comparison runs).
  bool scale_whole_difference = true;
  double norm_floor = 1.0;
  NuclearNormOptions nuclear;
};

/// Multimodal orthogonalization loss over M embeddings of shape l1 × N:
///   (1/(M·N)) · [Σ_m max(1, ‖h_m‖*) − ‖[h_1 … h_M]‖*]
Var mmo_loss(std::span<const Var> embeddings, const MmoOptions& options = {});

struct CombinedLoss {
  Var total;
  Var cox;
  Var mmo;  // valid only when has_mmo
  bool has_mmo = false;
};

/// L_pl + γ·L_MMO. With γ = 0 the MMO term is not built at all and the total
/// is the Cox node itself.
CombinedLoss combined_loss(Var theta, const SurvivalBatch& surv, std::span<const Var> embeddings,
                           double gamma, const MmoOptions& options = {},
                           CoxLossInfo* info = nullptr);

/// Cosine similarity of matching columns of two l × N nodes, as a 1×N node.
/// Columns with zero norm contribute similarity 0.
Var column_cosine(Var a, Var b);

/// Negative mean pairwise cosine similarity between modalities, averaged over
/// patients and modality pairs; −1 when all embeddings align.
Var similarity_loss(std::span<const Var> embeddings);

}  // namespace dof
