#include "ddr/numerics/autograd.hpp"

#include <stdexcept>

namespace ddr {

template <typename T>
Var<T> Graph<T>::param(std::string_view name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var<T>{this, it->second};
  if (!params_) throw std::logic_error("graph has no parameter set bound");
  Node n;
  n.external = &params_->get(name);
  n.requires_grad = track_ && params_->trainable(name);
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(std::string(name), id);
  return Var<T>{this, id};
}

template <typename T>
Tensor<T>& Graph<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw std::logic_error("backward: variable from another graph");
  if (value(loss.id).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(value(loss.id).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(n.grad);
  }
}

template <typename T>
GradMap<T> Graph<T>::param_grads() {
  GradMap<T> out;
  for (const auto& [name, id] : param_ids_) {
    if (!nodes_[id].requires_grad) continue;
    out.emplace(name, has_grad(id) ? nodes_[id].grad : Tensor<T>(value(id).shape(), T(0)));
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace ddr
