#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tensor is a cheap handle onto a shared node. Operations in ops.hpp build
// a graph implicitly: each result node keeps its parents and a local gradient
// rule. Tensor::backward() walks the graph reachable from a scalar loss in
// reverse topological order.
//
// Gradient semantics: leaf gradients ACCUMULATE across backward calls. Call
// zero_grad() (or zero_grads() over a parameter set) before each backward.
// Gradients of interior nodes are reset at the start of every backward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ftlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  // Writable view. Only for leaves; mutating an interior node's values
  // after the graph is built breaks its gradient rules.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  // Empty span when no gradient has been written.
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of values only; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  // loss.backward(): requires a single-element tensor.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by ops to wire the graph.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Nodes reachable from `root` that participate in differentiation, parents
// before children. Each node appears exactly once.
std::vector<detail::Node*> topological_order(const Tensor& root);

void zero_grads(std::span<Tensor> tensors);

}  // namespace ftlab
