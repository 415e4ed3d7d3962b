#include "ucs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ucs {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

template <typename T>
std::span<T> Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> inputs, BackwardFn<T> fn) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError(std::string(op) + ": produced " + std::to_string(data.size()) +
                     " values for shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track = grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& in) { return needs_grad(in); });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<detail::Node<T>>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                     shape_string(shape));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return full(Shape{1}, value, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(node_->data.begin(), node_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<null>")));
  }
  using NodeT = detail::Node<T>;
  const auto& root = loss.node();
  if (!root->requires_grad) {
    throw std::logic_error("backward: loss does not depend on any tensor requiring grad");
  }

  // Iterative post-order DFS; `order` ends with the root.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (NodeT* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
  for (NodeT* n : order) {
    if (!n->is_leaf()) std::vector<T>().swap(n->grad);
  }
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> detail::make_result(Shape, std::vector<float>, const char*,
                                           std::vector<std::shared_ptr<detail::Node<float>>>,
                                           detail::BackwardFn<float>);
template Tensor<double> detail::make_result(Shape, std::vector<double>, const char*,
                                            std::vector<std::shared_ptr<detail::Node<double>>>,
                                            detail::BackwardFn<double>);

}  // namespace ucs
