#pragma once

// Shared generators and oracles for the test suites. Generators are plain
// seeded loops over dof::Rng so every property run is reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dof/common/rng.hpp"
#include "dof/diffcore/graph.hpp"
#include "dof/losses/losses.hpp"

namespace dof::test {

inline Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

/// Survival data with integer-valued times (ties likely) and random censoring.
inline SurvivalBatch random_survival(Rng& rng, std::size_t n, std::size_t distinct_times, double event_rate) {
  SurvivalBatch s;
  for (std::size_t i = 0; i < n; ++i) {
    s.time.push_back(1.0 + static_cast<double>(rng.below(distinct_times)));
    s.event.push_back(rng.uniform() < event_rate ? 1 : 0);
  }
  return s;
}

/// Norm-wise relative error ‖a − b‖ / max(‖a‖, ‖b‖); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0.0 ? 0.0 : std::sqrt(diff) / den;
}

/// Builds a scalar loss from parameters bound into a fresh graph.
using LossBuilder = std::function<Var(Graph&)>;

/// Largest per-parameter relative error between backward() and central
/// differences with step h.
inline double gradient_check(const std::vector<Parameter*>& params, const LossBuilder& build, double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  double worst = 0.0;
  for (Parameter* p : params) {
    const std::vector<double> analytic(p->grad.storage());
    std::vector<double> numeric(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      double up;
      {
        Graph g;
        up = build(g).value().item();
      }
      p->value[i] = keep - h;
      double down;
      {
        Graph g;
        down = build(g).value().item();
      }
      p->value[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
    p->zero_grad();
  }
  return worst;
}

/// Σ r ∘ y as a scalar: probes the full Jacobian of y in one random direction.
inline Var probe(Graph& g, Var y, const Tensor& r) { return sum(elementwise_mul(y, g.constant(r))); }

/// Textbook Cox negative log partial likelihood by explicit risk sets.
inline double brute_force_cox(const std::vector<double>& theta, const SurvivalBatch& s) {
  double loss = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!s.event[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (s.time[j] >= s.time[i]) denom += std::exp(theta[j]);
    }
    loss -= theta[i] - std::log(denom);
  }
  return loss;
}

/// Harrell's C by enumerating every ordered pair.
inline double brute_force_cindex(const std::vector<double>& risk, const SurvivalBatch& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < risk.size(); ++i) {
    if (!s.event[i]) continue;
    for (std::size_t j = 0; j < risk.size(); ++j) {
      if (i == j) continue;
      const bool comparable = s.time[i] < s.time[j] || (s.time[i] == s.time[j] && !s.event[j]);
      if (!comparable) continue;
      den += 1.0;
      if (risk[i] > risk[j]) num += 1.0;
      else if (risk[i] == risk[j]) num += 0.5;
    }
  }
  return num / den;
}

}  // namespace dof::test
