#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coad::tensor {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

// Dense row-major array. Most ops treat it as a matrix (rank 2); biases and
// layer-norm parameters are rank 1, scalars have shape {1}.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(T v);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
class Tape;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value when requires_grad
  bool requires_grad = false;
  const Tape<T>* tape = nullptr;  // producing tape; null for leaves
};

// Shared handle to a value participating in differentiation.
template <typename T>
class Variable {
 public:
  Variable() = default;

  static Variable constant(Tensor<T> value);
  static Variable parameter(Tensor<T> value);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  void zero_grad();

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  template <typename>
  friend class Tape;
  explicit Variable(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  std::shared_ptr<Node<T>> node_;
};

// Records backward closures of executed ops for one step.
template <typename T>
class Tape {
 public:
  // Receives the op's output node (value and accumulated gradient).
  using Backward = std::function<void(const Node<T>&)>;

  // A non-recording tape produces constants only (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Wraps an op result. When `requires_grad`, a zero gradient buffer is
  // attached and `backward` must be supplied.
  Variable<T> result(Tensor<T> value, bool requires_grad, Backward backward = {});

  // Seeds d(loss)/d(loss) = 1 and replays recorded closures in reverse.
  // Throws ShapeError when `loss` is not a scalar produced by this tape.
  void backward(const Variable<T>& loss);

  bool recording() const { return record_; }
  std::size_t size() const { return closures_.size(); }
  void clear() { closures_.clear(); }

 private:
  bool record_ = true;
  std::vector<std::function<void()>> closures_;
};

}  // namespace coad::tensor
