#pragma once

// Differentiable operations over Graph nodes. Matrices are feature × patient:
// a batch of N column vectors. Every op validates shapes and throws
// std::invalid_argument on mismatch.

#include <span>
#include <vector>

#include "dof/diffcore/graph.hpp"
#include "dof/diffcore/svd.hpp"

namespace dof {

enum class Activation { kSigmoid, kRelu, kSelu, kIdentity };

inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

/// y = W·x + b, b broadcast over columns. x: in×N, W: out×in, b: out (or out×1).
Var linear(Var x, Var w, Var b);

/// Plain matrix product.
Var matmul(Var a, Var b);

Var activation(Var x, Activation kind);
inline Var sigmoid(Var x) { return activation(x, Activation::kSigmoid); }
inline Var relu(Var x) { return activation(x, Activation::kRelu); }
inline Var selu(Var x) { return activation(x, Activation::kSelu); }

/// Horizontal concatenation [A B ...]; equal row counts required.
Var concat_cols(std::span<const Var> parts);
/// Vertical stacking; equal column counts required.
Var concat_rows(std::span<const Var> parts);
/// Rows [begin, begin + count) of a matrix.
Var slice_rows(Var x, std::size_t begin, std::size_t count);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product.
Var elementwise_mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

/// Sum of all entries, as a scalar node.
Var sum(Var a);
Var mean(Var a);

/// max(floor, x) on a one-element node; gradient 1 above the floor, 0 at or
/// below it.
Var clamp_min(Var x, double floor);

/// Per-column bilinear forms, one output row per slice (K×N):
/// out[k, n] = x[:, n]ᵀ · W[k] · y[:, n] + bias[k], with W stored as an
/// (K·p) × q matrix of K stacked p × q slices, x: p×N, y: q×N.
Var bilinear(Var x, Var w, Var y, Var bias);

/// Nuclear norm of a matrix node. The backward pass applies the subgradient
/// U_r·V_rᵀ built from the triplets with σ > rank_tolerance · σ_max.
struct NuclearNormOptions {
  double rank_tolerance = 1e-9;
  SvdOptions svd;
};
Var nuclear_norm(Var a, const NuclearNormOptions& options = {});

}  // namespace dof
