#include "dof/diffcore/graph.hpp"

#include <stdexcept>

#include "dof/simd/kernels.hpp"

namespace dof {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param, bool trainable) {
  Node node{param.value, {}, {}, {}, nullptr, false};
  if (trainable) {
    node.param = &param;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw std::out_of_range("Graph::record: unknown input node");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(backward), nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Tensor Graph::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty() && !n.value.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::accumulate_grad(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw std::logic_error("Graph: gradient shape " + shape_string(g.shape()) +
                           " does not match value shape " + shape_string(n.value.shape()));
  }
  Tensor& buf = grad_buffer(id);
  simd::axpy(1.0, g.data(), buf.data());
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("Graph::backward: foreign node");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw std::invalid_argument("Graph::backward: loss must be a scalar, got shape " +
                                shape_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      if (n.param->grad.size() != n.grad.size()) n.param->grad = Tensor(n.param->value.shape());
      simd::axpy(1.0, n.grad.data(), n.param->grad.data());
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

}  // namespace dof
