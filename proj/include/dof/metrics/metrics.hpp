#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dof/losses/losses.hpp"

namespace dof::metrics {

/// Harrell's concordance index. A pair (i, j) is comparable when E_i = 1 and
/// t_i < t_j, or t_i = t_j with E_i = 1 and E_j = 0. Concordant pairs
/// (θ_i > θ_j) count 1, risk ties 0.5. O(N log N).
/// Throws std::invalid_argument when no pair is comparable.
double concordance_index(std::span<const double> risk, const SurvivalBatch& surv);

/// Integer pair counts behind the concordance index.
struct ConcordanceCounts {
  std::uint64_t comparable = 0;
  std::uint64_t concordant = 0;
  std::uint64_t tied = 0;
};
ConcordanceCounts concordance_counts(std::span<const double> risk, const SurvivalBatch& surv);

/// Kaplan-Meier curve with one row per distinct observed time (event or
/// censoring). Patients censored at an event time stay in that time's risk set.
struct KmCurve {
  std::vector<double> time;
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;
  std::vector<std::size_t> censored;

  /// S(t) as a right-continuous step function, 1 before the first time.
  double survival_at(double t) const;
};

KmCurve km_estimate(const SurvivalBatch& surv);

/// CSV with header time,survival,at_risk,events,censored.
void write_km_csv(std::ostream& os, const KmCurve& curve);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::string method;
};

/// Two-group log-rank test, χ² with one degree of freedom.
/// Throws std::invalid_argument if a group is empty or no events occur.
TestResult log_rank_test(const SurvivalBatch& group_a, const SurvivalBatch& group_b);

struct HazardRatio {
  double hr = 1.0;
  double log_hr = 0.0;
  double se = 0.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  int iterations = 0;
};

/// Univariate Cox fit on a binary label (1 vs 0) by Newton-Raphson on the
/// Breslow partial likelihood; Wald 95% interval. Throws NumericError on
/// non-convergence within 100 iterations or monotone likelihood (a group
/// without events, or a diverging coefficient).
HazardRatio hazard_ratio(std::span<const int> groups, const SurvivalBatch& surv);

/// Two-sided Mann-Whitney U test. U is the statistic of sample A (count of
/// pairs with a > b plus half the ties). Exact permutation distribution of the
/// midrank sum when n_a·n_b ≤ exact_limit, otherwise the tie-corrected normal
/// approximation with continuity correction.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                          std::size_t exact_limit = 400);

/// 1 (high risk) iff θ > 0.
std::vector<int> assign_risk_groups(std::span<const double> risk);

// Small numerical helpers shared with the harness.

/// Percentile q ∈ [0, 1] with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);
/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> values);
/// Upper tail of χ² with one degree of freedom.
double chi2_1_sf(double x);
/// Upper tail of the standard normal.
double normal_sf(double z);

}  // namespace dof::metrics
