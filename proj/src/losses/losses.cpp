#include "dof/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dof {

void SurvivalBatch::validate() const {
  if (time.size() != event.size()) {
    throw std::invalid_argument("SurvivalBatch: " + std::to_string(time.size()) + " times but " +
                                std::to_string(event.size()) + " event flags");
  }
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!(time[i] > 0.0) || !std::isfinite(time[i])) {
      throw std::invalid_argument("SurvivalBatch: time must be positive and finite (patient " +
                                  std::to_string(i) + ")");
    }
    if (event[i] != 0 && event[i] != 1) {
      throw std::invalid_argument("SurvivalBatch: event flag must be 0 or 1 (patient " +
                                  std::to_string(i) + ")");
    }
  }
}

SurvivalBatch SurvivalBatch::subset(std::span<const std::size_t> rows) const {
  SurvivalBatch out;
  out.time.reserve(rows.size());
  out.event.reserve(rows.size());
  for (std::size_t r : rows) {
    out.time.push_back(time.at(r));
    out.event.push_back(event.at(r));
  }
  return out;
}

std::size_t SurvivalBatch::event_count() const {
  return static_cast<std::size_t>(std::count(event.begin(), event.end(), 1));
}

Var cox_pl_loss(Var theta, const SurvivalBatch& surv, CoxLossInfo* info) {
  surv.validate();
  Graph& g = *theta.graph;
  const Tensor& tv = g.value(theta);
  const std::size_t n = surv.size();
  if (tv.size() != n) {
    throw std::invalid_argument("cox_pl_loss: " + std::to_string(tv.size()) + " risk scores for " +
                                std::to_string(n) + " patients");
  }
  const std::size_t events = surv.event_count();
  if (info != nullptr) {
    info->events = events;
    info->no_events = events == 0;
  }
  if (events == 0 || n == 0) {
    return g.record(Tensor::scalar(0.0), {theta.id}, [](Graph&, std::size_t) {});
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return surv.time[a] < surv.time[b]; });

  const double shift = *std::max_element(tv.data().begin(), tv.data().end());
  std::vector<double> expo(n);
  for (std::size_t i = 0; i < n; ++i) expo[i] = std::exp(tv[i] - shift);

  // Risk-set sums, sweeping from the latest time; tied times share one set.
  std::vector<double> risk_sum(n);
  double running = 0.0;
  for (std::size_t hi = n; hi > 0;) {
    std::size_t lo = hi - 1;
    while (lo > 0 && surv.time[order[lo - 1]] == surv.time[order[hi - 1]]) --lo;
    for (std::size_t k = lo; k < hi; ++k) running += expo[order[k]];
    for (std::size_t k = lo; k < hi; ++k) risk_sum[order[k]] = running;
    hi = lo;
  }

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (surv.event[i] == 1) loss -= (tv[i] - shift) - std::log(risk_sum[i]);
  }

  // dL/dθ_k = −E_k + exp(θ_k) · Σ_{i: E_i=1, t_i ≤ t_k} 1 / S_i
  auto grad = std::make_shared<std::vector<double>>(n);
  double inv_acc = 0.0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && surv.time[order[hi]] == surv.time[order[lo]]) ++hi;
    for (std::size_t k = lo; k < hi; ++k) {
      if (surv.event[order[k]] == 1) inv_acc += 1.0 / risk_sum[order[k]];
    }
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t p = order[k];
      (*grad)[p] = expo[p] * inv_acc - static_cast<double>(surv.event[p]);
    }
    lo = hi;
  }

  return g.record(Tensor::scalar(loss), {theta.id}, [theta = theta.id, grad](Graph& g, std::size_t self) {
    const double go = g.grad_buffer(self)[0];
    Tensor& gt = g.grad_buffer(theta);
    for (std::size_t i = 0; i < grad->size(); ++i) gt[i] += go * (*grad)[i];
  });
}

Var mmo_loss(std::span<const Var> embeddings, const MmoOptions& options) {
  if (embeddings.empty()) throw std::invalid_argument("mmo_loss: no embeddings");
  const Tensor& first = embeddings.front().value();
  for (const Var& e : embeddings) {
    if (!e.value().same_shape(first) || e.value().rank() != 2) {
      throw std::invalid_argument("mmo_loss: embeddings must share one l1 × N shape");
    }
  }
  const double scale_factor =
      1.0 / (static_cast<double>(embeddings.size()) * static_cast<double>(first.cols()));

  std::vector<Var> floored;
  floored.reserve(embeddings.size());
  for (const Var& e : embeddings) {
    floored.push_back(clamp_min(nuclear_norm(e, options.nuclear), options.norm_floor));
  }
  Var per_modality = floored.front();
  for (std::size_t m = 1; m < floored.size(); ++m) per_modality = add(per_modality, floored[m]);
  const Var joint = nuclear_norm(concat_cols(embeddings), options.nuclear);
  if (options.scale_whole_difference) return scale(sub(per_modality, joint), scale_factor);
  return sub(scale(per_modality, scale_factor), joint);
}

CombinedLoss combined_loss(Var theta, const SurvivalBatch& surv, std::span<const Var> embeddings,
                           double gamma, const MmoOptions& options, CoxLossInfo* info) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("combined_loss: gamma must be >= 0");
  CombinedLoss out;
  out.cox = cox_pl_loss(theta, surv, info);
  out.total = out.cox;
  if (gamma > 0.0 && !embeddings.empty()) {
    out.mmo = mmo_loss(embeddings, options);
    out.has_mmo = true;
    out.total = add(out.cox, scale(out.mmo, gamma));
  }
  return out;
}

Var column_cosine(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv) || av.rank() != 2) {
    throw std::invalid_argument("column_cosine: shapes " + shape_string(av.shape()) + " and " +
                                shape_string(bv.shape()));
  }
  const std::size_t rows = av.rows(), n = av.cols();
  auto norms = std::make_shared<std::vector<double>>(2 * n);
  Tensor out = Tensor::matrix(1, n);
  for (std::size_t c = 0; c < n; ++c) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      dot += av(r, c) * bv(r, c);
      na += av(r, c) * av(r, c);
      nb += bv(r, c) * bv(r, c);
    }
    (*norms)[2 * c] = std::sqrt(na);
    (*norms)[2 * c + 1] = std::sqrt(nb);
    const double denom = (*norms)[2 * c] * (*norms)[2 * c + 1];
    out(0, c) = denom > 0.0 ? dot / denom : 0.0;
  }
  return g.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, norms](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const Tensor& cosv = g.value(self);
    const std::size_t rows = av.rows(), n = av.cols();
    const bool need_a = g.requires_grad(a), need_b = g.requires_grad(b);
    for (std::size_t c = 0; c < n; ++c) {
      const double na = (*norms)[2 * c], nb = (*norms)[2 * c + 1];
      if (!(na > 0.0 && nb > 0.0)) continue;
      const double cs = cosv(0, c), gc = go(0, c);
      for (std::size_t r = 0; r < rows; ++r) {
        if (need_a) g.grad_buffer(a)(r, c) += gc * (bv(r, c) / (na * nb) - cs * av(r, c) / (na * na));
        if (need_b) g.grad_buffer(b)(r, c) += gc * (av(r, c) / (na * nb) - cs * bv(r, c) / (nb * nb));
      }
    }
  });
}

Var similarity_loss(std::span<const Var> embeddings) {
  if (embeddings.size() < 2) throw std::invalid_argument("similarity_loss: need at least two modalities");
  std::vector<Var> pair_means;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      pair_means.push_back(mean(column_cosine(embeddings[i], embeddings[j])));
    }
  }
  Var total = pair_means.front();
  for (std::size_t k = 1; k < pair_means.size(); ++k) total = add(total, pair_means[k]);
  return scale(total, -1.0 / static_cast<double>(pair_means.size()));
}

}  // namespace dof
