#include "coad/tensor/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "coad/error.hpp"

namespace coad::tensor {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor " + shape_string(shape_) + " given " + std::to_string(data_.size()) + " values");
  }
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Variable<T> Variable<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Variable(std::move(node));
}

template <typename T>
Variable<T> Variable<T>::parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->grad = Tensor<T>(value.shape());
  node->value = std::move(value);
  node->requires_grad = true;
  return Variable(std::move(node));
}

template <typename T>
void Variable<T>::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.fill(T{0});
}

template <typename T>
Variable<T> Tape<T>::result(Tensor<T> value, bool requires_grad, Backward backward) {
  auto node = std::make_shared<Node<T>>();
  requires_grad = requires_grad && record_;
  if (requires_grad) {
    if (!backward) throw ShapeError("op result requires a backward closure");
    node->grad = Tensor<T>(value.shape());
    node->requires_grad = true;
    node->tape = this;
  }
  node->value = std::move(value);
  if (requires_grad) {
    closures_.push_back([node, fn = std::move(backward)] { fn(*node); });
  }
  return Variable<T>(std::move(node));
}

template <typename T>
void Tape<T>::backward(const Variable<T>& loss) {
  if (!loss.defined() || !loss.requires_grad() || loss.node()->tape != this) {
    throw ShapeError("backward through a detached value: loss was not produced by this tape from trainable inputs");
  }
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  loss.node()->grad[0] += T{1};
  for (auto it = closures_.rbegin(); it != closures_.rend(); ++it) (*it)();
}

template class Tensor<float>;
template class Tensor<double>;
template class Variable<float>;
template class Variable<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace coad::tensor
