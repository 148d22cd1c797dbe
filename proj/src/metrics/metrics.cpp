#include "dof/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "dof/common/errors.hpp"

namespace dof::metrics {

namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted ranks < i.
  std::uint64_t prefix(std::size_t i) const {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

void check_lengths(std::span<const double> risk, const SurvivalBatch& surv) {
  surv.validate();
  if (risk.size() != surv.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(risk.size()) + " risk scores for " +
                                std::to_string(surv.size()) + " patients");
  }
}

std::vector<std::size_t> order_by_time(const SurvivalBatch& surv) {
  std::vector<std::size_t> order(surv.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return surv.time[a] < surv.time[b]; });
  return order;
}

}  // namespace

ConcordanceCounts concordance_counts(std::span<const double> risk, const SurvivalBatch& surv) {
  check_lengths(risk, surv);
  const std::size_t n = risk.size();
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  auto rank_of = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), v) - levels.begin());
  };

  const std::vector<std::size_t> order = order_by_time(surv);
  Fenwick later(levels.size());
  std::uint64_t inserted = 0;
  ConcordanceCounts counts;
  std::vector<double> censored_here;
  for (std::size_t hi = n; hi > 0;) {
    std::size_t lo = hi - 1;
    while (lo > 0 && surv.time[order[lo - 1]] == surv.time[order[hi - 1]]) --lo;
    censored_here.clear();
    for (std::size_t k = lo; k < hi; ++k) {
      if (surv.event[order[k]] == 0) censored_here.push_back(risk[order[k]]);
    }
    std::sort(censored_here.begin(), censored_here.end());
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = order[k];
      if (surv.event[i] != 1) continue;
      const std::size_t r = rank_of(risk[i]);
      const std::uint64_t below = later.prefix(r);
      const std::uint64_t equal = later.prefix(r + 1) - below;
      const auto lb = std::lower_bound(censored_here.begin(), censored_here.end(), risk[i]);
      const auto ub = std::upper_bound(censored_here.begin(), censored_here.end(), risk[i]);
      counts.comparable += inserted + censored_here.size();
      counts.concordant += below + static_cast<std::uint64_t>(lb - censored_here.begin());
      counts.tied += equal + static_cast<std::uint64_t>(ub - lb);
    }
    for (std::size_t k = lo; k < hi; ++k) later.add(rank_of(risk[order[k]]));
    inserted += hi - lo;
    hi = lo;
  }
  return counts;
}

double concordance_index(std::span<const double> risk, const SurvivalBatch& surv) {
  const ConcordanceCounts c = concordance_counts(risk, surv);
  if (c.comparable == 0) throw std::invalid_argument("concordance_index: no comparable pairs");
  return static_cast<double>(2 * c.concordant + c.tied) / static_cast<double>(2 * c.comparable);
}

double KmCurve::survival_at(double t) const {
  double s = 1.0;
  for (std::size_t i = 0; i < time.size() && time[i] <= t; ++i) s = survival[i];
  return s;
}

KmCurve km_estimate(const SurvivalBatch& surv) {
  surv.validate();
  if (surv.size() == 0) throw std::invalid_argument("km_estimate: empty batch");
  const std::vector<std::size_t> order = order_by_time(surv);
  KmCurve curve;
  double s = 1.0;
  std::size_t at_risk = surv.size();
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    std::size_t d = 0, c = 0;
    while (hi < order.size() && surv.time[order[hi]] == surv.time[order[lo]]) {
      (surv.event[order[hi]] == 1 ? d : c) += 1;
      ++hi;
    }
    if (d > 0) s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
    curve.time.push_back(surv.time[order[lo]]);
    curve.survival.push_back(s);
    curve.at_risk.push_back(at_risk);
    curve.events.push_back(d);
    curve.censored.push_back(c);
    at_risk -= hi - lo;
    lo = hi;
  }
  return curve;
}

void write_km_csv(std::ostream& os, const KmCurve& curve) {
  os << "time,survival,at_risk,events,censored\n";
  const auto old_precision = os.precision(17);
  for (std::size_t i = 0; i < curve.time.size(); ++i) {
    os << curve.time[i] << ',' << curve.survival[i] << ',' << curve.at_risk[i] << ','
       << curve.events[i] << ',' << curve.censored[i] << '\n';
  }
  os.precision(old_precision);
}

TestResult log_rank_test(const SurvivalBatch& group_a, const SurvivalBatch& group_b) {
  group_a.validate();
  group_b.validate();
  if (group_a.size() == 0 || group_b.size() == 0) {
    throw std::invalid_argument("log_rank_test: both groups must be nonempty");
  }
  SurvivalBatch pooled = group_a;
  std::vector<int> in_a(group_a.size(), 1);
  pooled.time.insert(pooled.time.end(), group_b.time.begin(), group_b.time.end());
  pooled.event.insert(pooled.event.end(), group_b.event.begin(), group_b.event.end());
  in_a.resize(pooled.size(), 0);
  if (pooled.event_count() == 0) throw std::invalid_argument("log_rank_test: no events in either group");

  const std::vector<std::size_t> order = order_by_time(pooled);
  double n_a = static_cast<double>(group_a.size());
  double n = static_cast<double>(pooled.size());
  double observed_minus_expected = 0.0, variance = 0.0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    double d = 0.0, d_a = 0.0, leave = 0.0, leave_a = 0.0;
    while (hi < order.size() && pooled.time[order[hi]] == pooled.time[order[lo]]) {
      const std::size_t i = order[hi];
      if (pooled.event[i] == 1) {
        d += 1.0;
        d_a += in_a[i];
      }
      leave += 1.0;
      leave_a += in_a[i];
      ++hi;
    }
    if (d > 0.0) {
      observed_minus_expected += d_a - d * n_a / n;
      if (n > 1.0) variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
    }
    n -= leave;
    n_a -= leave_a;
    lo = hi;
  }
  TestResult r;
  r.method = "log-rank";
  r.statistic = variance > 0.0 ? observed_minus_expected * observed_minus_expected / variance : 0.0;
  r.p_value = chi2_1_sf(r.statistic);
  return r;
}

HazardRatio hazard_ratio(std::span<const int> groups, const SurvivalBatch& surv) {
  surv.validate();
  if (groups.size() != surv.size()) throw std::invalid_argument("hazard_ratio: label length mismatch");
  std::size_t events1 = 0, events0 = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != 0 && groups[i] != 1) throw std::invalid_argument("hazard_ratio: labels must be 0/1");
    if (surv.event[i] == 1) (groups[i] == 1 ? events1 : events0) += 1;
  }
  if (events1 == 0 || events0 == 0) {
    throw NumericError("hazard_ratio: monotone likelihood (a group has no events)");
  }

  const std::vector<std::size_t> order = order_by_time(surv);
  // Log partial likelihood, score and information at beta.
  auto evaluate = [&](double beta, double& score, double& info) {
    const double eb = std::exp(beta);
    double s0 = 0.0, s1 = 0.0, loglik = 0.0;
    score = 0.0;
    info = 0.0;
    for (std::size_t hi = order.size(); hi > 0;) {
      std::size_t lo = hi - 1;
      while (lo > 0 && surv.time[order[lo - 1]] == surv.time[order[hi - 1]]) --lo;
      for (std::size_t k = lo; k < hi; ++k) {
        const double w = groups[order[k]] == 1 ? eb : 1.0;
        s0 += w;
        s1 += groups[order[k]] == 1 ? w : 0.0;
      }
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        if (surv.event[i] != 1) continue;
        const double x = groups[i];
        const double mean_x = s1 / s0;
        loglik += beta * x - std::log(s0);
        score += x - mean_x;
        info += mean_x * (1.0 - mean_x);
      }
      hi = lo;
    }
    return loglik;
  };

  double beta = 0.0, score = 0.0, info = 0.0;
  double loglik = evaluate(beta, score, info);
  HazardRatio out;
  for (int it = 1; it <= 100; ++it) {
    if (!(info > 0.0)) throw NumericError("hazard_ratio: singular information matrix");
    double step = score / info;
    double next_score = 0.0, next_info = 0.0;
    double next = evaluate(beta + step, next_score, next_info);
    int halvings = 0;
    while (next < loglik - 1e-12 && halvings < 30) {
      step *= 0.5;
      next = evaluate(beta + step, next_score, next_info);
      ++halvings;
    }
    beta += step;
    loglik = next;
    score = next_score;
    info = next_info;
    if (std::abs(beta) > 30.0) throw NumericError("hazard_ratio: monotone likelihood (coefficient diverges)");
    if (std::abs(step) < 1e-12) {
      out.iterations = it;
      out.log_hr = beta;
      out.hr = std::exp(beta);
      out.se = 1.0 / std::sqrt(info);
      constexpr double z = 1.959963984540054;
      out.ci_low = std::exp(beta - z * out.se);
      out.ci_high = std::exp(beta + z * out.se);
      return out;
    }
  }
  throw NumericError("hazard_ratio: Newton-Raphson did not converge in 100 iterations");
}

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, std::size_t exact_limit) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be nonempty");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(n);
  for (double v : a) pooled.emplace_back(v, 1);
  for (double v : b) pooled.emplace_back(v, 0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return pooled[x].first < pooled[y].first; });

  // Doubled midranks are integers: tie block [lo, hi) gets lo + hi + 1.
  std::vector<std::uint64_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && pooled[idx[hi]].first == pooled[idx[lo]].first) ++hi;
    for (std::size_t k = lo; k < hi; ++k) rank2[idx[k]] = lo + hi + 1;
    const double t = static_cast<double>(hi - lo);
    tie_term += t * t * t - t;
    lo = hi;
  }
  std::uint64_t w2 = 0;
  for (std::size_t i = 0; i < na; ++i) w2 += rank2[i];

  TestResult r;
  const double fa = static_cast<double>(na), fb = static_cast<double>(nb), fn = static_cast<double>(n);
  r.statistic = static_cast<double>(w2) / 2.0 - fa * (fa + 1.0) / 2.0;
  const std::int64_t mean2 = static_cast<std::int64_t>(na * (n + 1));
  const std::int64_t observed_dev = std::llabs(static_cast<std::int64_t>(w2) - mean2);

  if (na * nb <= exact_limit) {
    r.method = "mann-whitney exact";
    // ways[k][s]: subsets of size k with doubled rank sum s.
    const std::size_t max_sum = n * (n + 1);
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(max_sum + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r2 = rank2[i];
      for (std::size_t k = std::min(na, i + 1); k >= 1; --k) {
        const auto& prev = ways[k - 1];
        auto& cur = ways[k];
        for (std::size_t s = max_sum; s >= r2; --s) {
          if (prev[s - r2] != 0.0) cur[s] += prev[s - r2];
          if (s == r2) break;
        }
      }
    }
    double extreme = 0.0, total = 0.0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      const double w = ways[na][s];
      if (w == 0.0) continue;
      total += w;
      if (std::llabs(static_cast<std::int64_t>(s) - mean2) >= observed_dev) extreme += w;
    }
    r.p_value = std::min(1.0, extreme / total);
    return r;
  }

  r.method = "mann-whitney normal";
  const double mu = fa * fb / 2.0;
  const double var = fa * fb / 12.0 * ((fn + 1.0) - tie_term / (fn * (fn - 1.0)));
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.statistic - mu) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, 2.0 * normal_sf(z));
  return r;
}

std::vector<int> assign_risk_groups(std::span<const double> risk) {
  std::vector<int> out(risk.size());
  for (std::size_t i = 0; i < risk.size(); ++i) out[i] = risk[i] > 0.0 ? 1 : 0;
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return percentile(std::move(values), 0.5); }

double stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double chi2_1_sf(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace dof::metrics
