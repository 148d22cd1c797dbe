#pragma once

#include <vector>

#include "dof/diffcore/tensor.hpp"

namespace dof {

/// Thin SVD A = U·diag(s)·Vᵀ with k = min(rows, cols) triplets, singular
/// values sorted descending.
struct Svd {
  Tensor u;               // rows × k
  std::vector<double> s;  // k
  Tensor v;               // cols × k
  int sweeps = 0;
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-15;
};

/// One-sided (Hestenes) Jacobi SVD. Works on the taller orientation of A.
/// Throws NumericError naming the sweep count if off-diagonal mass does not
/// vanish within max_sweeps, and std::invalid_argument on non-finite input.
Svd jacobi_svd(const Tensor& a, const SvdOptions& options = {});

}  // namespace dof
