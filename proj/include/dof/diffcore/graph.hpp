#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dof/diffcore/tensor.hpp"

namespace dof {

/// A named trainable tensor with its gradient accumulator. Models own their
/// parameters by value; graphs refer to them only for the duration of a pass.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape of forward operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, which is a topological order, so
/// backward() is a single reverse sweep visiting every node once. A node
/// requires a gradient when any of its inputs does; constants and frozen
/// parameters do not, and their subgraphs are skipped during the sweep.
///
/// A graph is single-threaded. Separate graphs share no state.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);

  /// Leaf bound to `param`. With trainable=false the value is copied in as a
  /// constant and no gradient ever reaches the parameter.
  Var parameter(Parameter& param, bool trainable = true);

  /// Appends an op node. `backward` reads grad(self) and accumulates into the
  /// inputs with accumulate_grad(); it is only invoked when the node requires
  /// a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Gradient of the last backward() loss w.r.t. node `id`; zeros if the node
  /// received none.
  Tensor grad(std::size_t id) const;
  Tensor grad(Var v) const { return grad(v.id); }

  /// Adds `g` into the gradient accumulator of node `id` if it requires one.
  void accumulate_grad(std::size_t id, const Tensor& g);
  /// Direct access to the accumulator for in-place accumulation by ops.
  Tensor& grad_buffer(std::size_t id);

  /// Reverse sweep from a one-element loss node, seeded with 1. Parameter
  /// leaves add their gradient into Parameter::grad. Throws
  /// std::invalid_argument if the loss is not a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

}  // namespace dof
