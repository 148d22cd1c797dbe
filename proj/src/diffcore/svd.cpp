#include "dof/diffcore/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dof/common/errors.hpp"

namespace dof {

namespace {

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

void rotate(std::vector<double>& x, std::vector<double>& y, double c, double s) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i], yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

}  // namespace

Svd jacobi_svd(const Tensor& a, const SvdOptions& options) {
  if (a.rank() != 2) throw std::invalid_argument("jacobi_svd: expected a matrix");
  if (!a.all_finite()) throw std::invalid_argument("jacobi_svd: non-finite entries");

  const bool transpose = a.rows() < a.cols();
  const std::size_t m = transpose ? a.cols() : a.rows();
  const std::size_t n = transpose ? a.rows() : a.cols();

  // Columns of the tall working matrix B (m × n) and the accumulated rotations.
  std::vector<std::vector<double>> b(n, std::vector<double>(m));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) b[j][i] = transpose ? a(j, i) : a(i, j);
    v[j][j] = 1.0;
  }

  // Columns that have collapsed to rounding noise count as converged.
  double total = 0.0;
  for (const auto& col : b) total += dot(col, col);
  const double negligible = total * 1e-30;

  int sweep = 0;
  bool converged = n < 2;
  while (!converged) {
    if (sweep >= options.max_sweeps) {
      throw NumericError("jacobi_svd: no convergence after " + std::to_string(sweep) +
                         " sweeps");
    }
    ++sweep;
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(b[p], b[p]);
        const double beta = dot(b[q], b[q]);
        const double gamma = dot(b[p], b[q]);
        if (gamma == 0.0 || alpha <= negligible || beta <= negligible ||
            std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) {
          continue;
        }
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        rotate(b[p], b[q], c, s);
        rotate(v[p], v[q], c, s);
      }
    }
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(b[j], b[j]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  // Left vectors of B live in R^m, right vectors in R^n.
  Tensor left = Tensor::matrix(m, n);
  Tensor right = Tensor::matrix(n, n);
  Svd out;
  out.s.resize(n);
  out.sweeps = sweep;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sigma[j];
    for (std::size_t i = 0; i < m; ++i) left(i, k) = sigma[j] > 0.0 ? b[j][i] / sigma[j] : 0.0;
    for (std::size_t i = 0; i < n; ++i) right(i, k) = v[j][i];
  }
  if (transpose) {
    out.u = std::move(right);
    out.v = std::move(left);
  } else {
    out.u = std::move(left);
    out.v = std::move(right);
  }
  return out;
}

}  // namespace dof
