#pragma once

#include <functional>
#include <vector>

#include "crossalign/tensor.hpp"

namespace crossalign {

template <typename Scalar>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index size() const { return value().size(); }
};

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Nodes are appended in creation order, so inputs always precede their
/// consumers; backward() replays adjoints in exact reverse creation order.
/// Leaves reference caller-owned tensors, which must outlive the graph and
/// must not be resized while it is alive.
template <typename Scalar>
class Graph {
 public:
  using Array = typename Tensor<Scalar>::Array;
  /// Receives the node's accumulated output gradient and pushes adjoints to
  /// the node's inputs through accumulate().
  using BackwardFn = std::function<void(Graph&, const Array&)>;

  /// With `track_gradients` false nothing is differentiated; used for
  /// inference where parameters may still have requires_grad set.
  explicit Graph(bool track_gradients = true) : track_gradients_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Records a copy of `value` that never receives gradients.
  Var<Scalar> constant(Tensor<Scalar> value);

  /// Records a reference to a caller-owned tensor. If the tensor requires
  /// grad, backward() adds dLoss/dTensor into tensor.grad().
  Var<Scalar> leaf(Tensor<Scalar>& tensor);

  /// Appends an operation result. `backward` is only invoked when some input
  /// needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                     BackwardFn backward);

  const Tensor<Scalar>& value(Var<Scalar> v) const;
  bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }

  /// Adds `g` into the gradient buffer of `v` (no-op when not needed).
  void accumulate(Var<Scalar> v, const Array& g);

  /// Populates gradients from a single-element loss. Internal node
  /// gradients are reset first; leaf tensors accumulate across calls.
  void backward(Var<Scalar> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar>* leaf = nullptr;
    bool needs_grad = false;
    Array grad;
    BackwardFn backward;
  };

  bool track_gradients_ = true;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace crossalign
