#include "crossalign/graph.hpp"

namespace crossalign {

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Tensor<Scalar> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::leaf(Tensor<Scalar>& tensor) {
  Node node;
  node.leaf = &tensor;
  node.needs_grad = track_gradients_ && tensor.requires_grad();
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                                  BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.graph != this) {
      throw Error("operation mixes values from different graphs");
    }
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  if (node.needs_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
const Tensor<Scalar>& Graph<Scalar>::value(Var<Scalar> v) const {
  const Node& node = nodes_[v.id];
  return node.leaf ? *node.leaf : node.value;
}

template <typename Scalar>
void Graph<Scalar>::accumulate(Var<Scalar> v, const Array& g) {
  Node& node = nodes_[v.id];
  if (!node.needs_grad) {
    return;
  }
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

template <typename Scalar>
void Graph<Scalar>::backward(Var<Scalar> loss) {
  if (loss.graph != this) {
    throw Error("backward called with a value from another graph");
  }
  if (value(loss).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  for (Node& node : nodes_) {
    node.grad.resize(0);
  }
  if (!nodes_[loss.id].needs_grad) {
    return;
  }
  nodes_[loss.id].grad = Array::Ones(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.size() == 0) {
      continue;
    }
    if (node.leaf) {
      if (node.leaf->requires_grad()) {
        node.leaf->grad() += node.grad;
      }
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace crossalign
