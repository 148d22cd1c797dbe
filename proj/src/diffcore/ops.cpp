#include "dof/diffcore/ops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "dof/simd/kernels.hpp"

namespace dof {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got " +
                                shape_string(t.shape()));
  }
}

Graph& graph_of(std::span<const Var> vars) {
  if (vars.empty() || vars.front().graph == nullptr) {
    throw std::invalid_argument("op: empty input list");
  }
  for (const Var& v : vars) {
    if (v.graph != vars.front().graph) throw std::invalid_argument("op: inputs from different graphs");
  }
  return *vars.front().graph;
}

// C (m×n) += A (m×k) · B (k×n)
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  simd::gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), true);
}

double activate(double z, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid:
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kSelu: return z > 0.0 ? kSeluScale * z : kSeluScale * kSeluAlpha * std::expm1(z);
    case Activation::kIdentity: return z;
  }
  return z;
}

// Derivative expressed through the input z and output y.
double activate_grad(double z, double y, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid: return y * (1.0 - y);
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kSelu: return z > 0.0 ? kSeluScale : y + kSeluScale * kSeluAlpha;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

}  // namespace

Var linear(Var x, Var w, Var b) {
  const Var all[] = {x, w, b};
  Graph& g = graph_of(all);
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  require_matrix("linear", xv);
  require_matrix("linear", wv);
  if (wv.cols() != xv.rows()) shape_error("linear", wv, xv);
  if (bv.size() != wv.rows() || bv.rank() > 2 || (bv.rank() == 2 && bv.cols() != 1)) {
    shape_error("linear", wv, bv);
  }
  const std::size_t out = wv.rows(), n = xv.cols();
  Tensor y = matmul(wv, xv);
  for (std::size_t r = 0; r < out; ++r) {
    const double br = bv[r];
    for (std::size_t c = 0; c < n; ++c) y(r, c) = y(r, c) + br;
  }
  return g.record(std::move(y), {x.id, w.id, b.id}, [x = x.id, w = w.id, b = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    if (g.requires_grad(w)) {
      gemm_acc(go, g.value(x).transposed(), g.grad_buffer(w));
    }
    if (g.requires_grad(x)) {
      gemm_acc(g.value(w).transposed(), go, g.grad_buffer(x));
    }
    if (g.requires_grad(b)) {
      Tensor& db = g.grad_buffer(b);
      const std::size_t cols = go.cols();
      for (std::size_t r = 0; r < go.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += go(r, c);
        db[r] += s;
      }
    }
  });
}

Var matmul(Var a, Var b) {
  const Var all[] = {a, b};
  Graph& g = graph_of(all);
  Tensor y = matmul(g.value(a), g.value(b));
  return g.record(std::move(y), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    if (g.requires_grad(a)) gemm_acc(go, g.value(b).transposed(), g.grad_buffer(a));
    if (g.requires_grad(b)) gemm_acc(g.value(a).transposed(), go, g.grad_buffer(b));
  });
}

Var activation(Var x, Activation kind) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = activate(xv[i], kind);
  return g.record(std::move(y), {x.id}, [x = x.id, kind](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& xv = g.value(x);
    const Tensor& yv = g.value(self);
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += go[i] * activate_grad(xv[i], yv[i], kind);
  });
}

Var concat_cols(std::span<const Var> parts) {
  Graph& g = graph_of(parts);
  const std::size_t rows = g.value(parts.front()).rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = g.value(p);
    require_matrix("concat_cols", v);
    if (v.rows() != rows) shape_error("concat_cols", g.value(parts.front()), v);
    total += v.cols();
  }
  Tensor y = Tensor::matrix(rows, total);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = g.value(p);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) y(r, offset + c) = v(r, c);
    }
    offset += v.cols();
    ids.push_back(p.id);
  }
  return g.record(std::move(y), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t cols = g.value(id).cols();
      if (g.requires_grad(id)) {
        Tensor& gp = g.grad_buffer(id);
        for (std::size_t r = 0; r < go.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) gp(r, c) += go(r, offset + c);
        }
      }
      offset += cols;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  Graph& g = graph_of(parts);
  const std::size_t cols = g.value(parts.front()).cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = g.value(p);
    require_matrix("concat_rows", v);
    if (v.cols() != cols) shape_error("concat_rows", g.value(parts.front()), v);
    total += v.rows();
  }
  std::vector<double> data;
  data.reserve(total * cols);
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    const auto d = g.value(p).data();
    data.insert(data.end(), d.begin(), d.end());
    ids.push_back(p.id);
  }
  return g.record(Tensor::matrix(total, cols, std::move(data)), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t n = g.value(id).size();
      if (g.requires_grad(id)) {
        Tensor& gp = g.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += go[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  require_matrix("slice_rows", xv);
  if (begin + count > xv.rows()) {
    throw std::invalid_argument("slice_rows: rows [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                shape_string(xv.shape()));
  }
  const std::size_t cols = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  return g.record(Tensor::matrix(count, cols, std::move(data)), {x.id},
                  [x = x.id, begin, cols](Graph& g, std::size_t self) {
                    const Tensor& go = g.grad_buffer(self);
                    Tensor& gx = g.grad_buffer(x);
                    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * cols + i] += go[i];
                  });
}

Var add(Var a, Var b) {
  const Var all[] = {a, b};
  Graph& g = graph_of(all);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor y = av;
  simd::axpy(1.0, bv.data(), y.data());
  return g.record(std::move(y), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
    const Tensor go = g.grad_buffer(self);
    g.accumulate_grad(a, go);
    g.accumulate_grad(b, go);
  });
}

Var sub(Var a, Var b) {
  const Var all[] = {a, b};
  Graph& g = graph_of(all);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor y = av;
  simd::axpy(-1.0, bv.data(), y.data());
  return g.record(std::move(y), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    if (g.requires_grad(a)) simd::axpy(1.0, go.data(), g.grad_buffer(a).data());
    if (g.requires_grad(b)) simd::axpy(-1.0, go.data(), g.grad_buffer(b).data());
  });
}

Var elementwise_mul(Var a, Var b) {
  const Var all[] = {a, b};
  Graph& g = graph_of(all);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) shape_error("elementwise_mul", av, bv);
  Tensor y(av.shape());
  simd::hadamard(av.data(), bv.data(), y.data());
  return g.record(std::move(y), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    if (g.requires_grad(a)) {
      Tensor t(go.shape());
      simd::hadamard(go.data(), g.value(b).data(), t.data());
      simd::axpy(1.0, t.data(), g.grad_buffer(a).data());
    }
    if (g.requires_grad(b)) {
      Tensor t(go.shape());
      simd::hadamard(go.data(), g.value(a).data(), t.data());
      simd::axpy(1.0, t.data(), g.grad_buffer(b).data());
    }
  });
}

Var scale(Var a, double factor) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  Tensor y(av.shape());
  simd::axpy(factor, av.data(), y.data());
  return g.record(std::move(y), {a.id}, [a = a.id, factor](Graph& g, std::size_t self) {
    simd::axpy(factor, g.grad_buffer(self).data(), g.grad_buffer(a).data());
  });
}

Var add_scalar(Var a, double offset) {
  Graph& g = *a.graph;
  Tensor y = g.value(a);
  for (double& v : y.storage()) v += offset;
  return g.record(std::move(y), {a.id}, [a = a.id](Graph& g, std::size_t self) {
    simd::axpy(1.0, g.grad_buffer(self).data(), g.grad_buffer(a).data());
  });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  return g.record(Tensor::scalar(s), {a.id}, [a = a.id](Graph& g, std::size_t self) {
    const double go = g.grad_buffer(self)[0];
    for (double& v : g.grad_buffer(a).storage()) v += go;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var clamp_min(Var x, double floor) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  if (xv.size() != 1) {
    throw std::invalid_argument("clamp_min: expected one element, got " + shape_string(xv.shape()));
  }
  const bool active = xv[0] > floor;
  return g.record(Tensor::scalar(active ? xv[0] : floor), {x.id}, [x = x.id, active](Graph& g, std::size_t self) {
    if (active) g.grad_buffer(x)[0] += g.grad_buffer(self)[0];
  });
}

Var bilinear(Var x, Var w, Var y, Var bias) {
  const Var all[] = {x, w, y, bias};
  Graph& g = graph_of(all);
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& yv = g.value(y);
  const Tensor& bv = g.value(bias);
  require_matrix("bilinear", xv);
  require_matrix("bilinear", wv);
  require_matrix("bilinear", yv);
  if (xv.cols() != yv.cols()) shape_error("bilinear", xv, yv);
  if (wv.cols() != yv.rows()) shape_error("bilinear", wv, yv);
  const std::size_t p = xv.rows(), n = xv.cols();
  if (p == 0 || wv.rows() % p != 0) shape_error("bilinear", wv, xv);
  const std::size_t slices = wv.rows() / p;
  if (bv.size() != slices) shape_error("bilinear", wv, bv);

  // projected[k·p + i, n] = (W[k] · y[:, n])_i
  auto projected = std::make_shared<Tensor>(matmul(wv, yv));
  Tensor out = Tensor::matrix(slices, n);
  for (std::size_t k = 0; k < slices; ++k) {
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < p; ++i) s += xv(i, c) * (*projected)(k * p + i, c);
      out(k, c) = s + bv[k];
    }
  }
  return g.record(std::move(out), {x.id, w.id, y.id, bias.id},
                  [x = x.id, w = w.id, y = y.id, bias = bias.id, projected, p, slices](Graph& g, std::size_t self) {
                    const Tensor& go = g.grad_buffer(self);
                    const Tensor& xv = g.value(x);
                    const std::size_t n = xv.cols();
                    if (g.requires_grad(x)) {
                      Tensor& gx = g.grad_buffer(x);
                      for (std::size_t k = 0; k < slices; ++k) {
                        for (std::size_t i = 0; i < p; ++i) {
                          for (std::size_t c = 0; c < n; ++c) gx(i, c) += go(k, c) * (*projected)(k * p + i, c);
                        }
                      }
                    }
                    if (g.requires_grad(w) || g.requires_grad(y)) {
                      Tensor dproj = Tensor::matrix(slices * p, n);
                      for (std::size_t k = 0; k < slices; ++k) {
                        for (std::size_t i = 0; i < p; ++i) {
                          for (std::size_t c = 0; c < n; ++c) dproj(k * p + i, c) = go(k, c) * xv(i, c);
                        }
                      }
                      if (g.requires_grad(w)) gemm_acc(dproj, g.value(y).transposed(), g.grad_buffer(w));
                      if (g.requires_grad(y)) gemm_acc(g.value(w).transposed(), dproj, g.grad_buffer(y));
                    }
                    if (g.requires_grad(bias)) {
                      Tensor& gb = g.grad_buffer(bias);
                      for (std::size_t k = 0; k < slices; ++k) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < n; ++c) s += go(k, c);
                        gb[k] += s;
                      }
                    }
                  });
}

Var nuclear_norm(Var a, const NuclearNormOptions& options) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  require_matrix("nuclear_norm", av);
  auto svd = std::make_shared<Svd>(jacobi_svd(av, options.svd));
  double total = 0.0;
  for (double s : svd->s) total += s;
  const double cutoff = options.rank_tolerance * (svd->s.empty() ? 0.0 : svd->s.front());
  return g.record(Tensor::scalar(total), {a.id}, [a = a.id, svd, cutoff](Graph& g, std::size_t self) {
    const double go = g.grad_buffer(self)[0];
    Tensor& ga = g.grad_buffer(a);
    const std::size_t rows = svd->u.rows(), cols = svd->v.rows();
    for (std::size_t k = 0; k < svd->s.size(); ++k) {
      if (!(svd->s[k] > cutoff)) continue;
      for (std::size_t i = 0; i < rows; ++i) {
        const double ui = go * svd->u(i, k);
        for (std::size_t j = 0; j < cols; ++j) ga(i, j) += ui * svd->v(j, k);
      }
    }
  });
}

}  // namespace dof
