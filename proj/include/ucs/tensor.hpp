#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ucs {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for every shape contract violation; the message names the operation
/// and both offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the grads of `inputs`.
  std::function<void(const Node& self)> backward;

  bool is_leaf() const { return !backward; }
  std::span<T> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor that records the operations producing it.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Gradients of leaves accumulate across backward() calls until zero_grad().
/// Interior gradients are transient, so the graph stays valid and may be
/// traversed again (each traversal adds the same contribution to the leaves).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Writable view. Only meaningful on leaves; mutating an interior node does
  /// not propagate into the graph.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  /// Deep copy of the values as a fresh leaf without history.
  Tensor detach() const;

  bool all_finite() const;

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Thread-local switch that suppresses graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Leaf grads accumulate (+=).
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

template <typename T>
using BackwardFn = std::function<void(const Node<T>&)>;

/// Wraps freshly computed output values into a graph node. The backward
/// closure is attached only when recording is on and some input needs grads.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> inputs, BackwardFn<T> fn);

template <typename T>
bool needs_grad(const std::shared_ptr<Node<T>>& n) {
  return n && n->requires_grad;
}

}  // namespace detail

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace ucs
