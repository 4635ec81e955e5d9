#include "agln/graph.hpp"

#include <numeric>
#include <optional>
#include <sstream>

namespace agln {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Graph<T>::check_owner(const Var<T>& v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw GraphError("variable does not belong to this graph");
}

template <typename T>
bool Graph<T>::any_requires_grad(std::span<const Var<T>> vars) {
  for (const auto& v : vars) {
    if (v.requires_grad()) return true;
  }
  return false;
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<Var<T>> parents, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by operation");
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const auto& p : parents) {
    check_owner(p);
    node.parents.push_back(p.id);
    node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var<T> loss) {
  check_owner(loss);
  if (backward_done_) throw GraphError("backward called twice on the same recording");
  const Tensor<T>& loss_value = nodes_[loss.id].value;
  if (loss_value.size() != 1 || loss_value.rank() != 0) {
    throw GraphError("backward requires a scalar loss, got shape " + shape_str(loss_value.shape()));
  }
  backward_done_ = true;

  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  if (nodes_[loss.id].requires_grad) grads[loss.id] = Tensor<T>::scalar(T{1});

  std::vector<Tensor<T>*> parent_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!grads[i] || !node.backward) continue;
    parent_grads.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::size_t p = node.parents[k];
      if (!nodes_[p].requires_grad) continue;
      if (!grads[p]) grads[p] = Tensor<T>(nodes_[p].value.shape());
      parent_grads[k] = &*grads[p];
    }
    node.backward(*grads[i], node.value, parent_grads);
    // Intermediate gradients are consumed exactly once.
    if (!node.is_parameter) grads[i].reset();
    node.backward = nullptr;
  }

  GradientMap<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_parameter) continue;
    out.insert(i, grads[i] ? std::move(*grads[i]) : Tensor<T>(nodes_[i].value.shape()));
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace agln
