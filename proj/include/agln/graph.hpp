#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "agln/tensor.hpp"

namespace agln {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Graph;

// Handle to a value recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

template <typename T>
class GradientMap {
 public:
  void insert(std::size_t id, Tensor<T> grad) { grads_.insert_or_assign(id, std::move(grad)); }
  const Tensor<T>& at(std::size_t id) const { return grads_.at(id); }
  const Tensor<T>& at(const Var<T>& v) const { return grads_.at(v.id); }
  bool contains(std::size_t id) const { return grads_.contains(id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<std::size_t, Tensor<T>> grads_;
};

// Tape of recorded operations. Node ids increase in creation order and parents always
// precede children, so reverse creation order is a valid deterministic topological order.
template <typename T>
class Graph {
 public:
  // grads[i] is null when parent i does not require a gradient; otherwise it points at a
  // zero-initialised (or partially accumulated) buffer of the parent's shape to add into.
  using BackwardFn =
      std::function<void(const Tensor<T>& grad_out, const Tensor<T>& out, std::span<Tensor<T>*> grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(Tensor<T> value);

  // Appends an op node. `fn` is dropped when no parent requires a gradient. Throws
  // NumericError if `value` holds NaN or Inf.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> parents, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool is_parameter(std::size_t id) const { return nodes_.at(id).is_parameter; }
  std::size_t size() const { return nodes_.size(); }

  static bool any_requires_grad(std::span<const Var<T>> vars);

  // Reverse-mode sweep from a scalar loss. Every parameter leaf gets an entry; parameters
  // the loss does not depend on get zeros.
  GradientMap<T> backward(Var<T> loss);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_parameter = false;
  };

  void check_owner(const Var<T>& v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace agln
