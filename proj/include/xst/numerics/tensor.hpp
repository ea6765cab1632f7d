// Dense tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node holding shape, row-major
// data and an optional gradient buffer. Operations (see ops.hpp) record a
// backward rule on the thread's active Tape when any input requires a
// gradient; backward() replays the tape in exact reverse recording order.
//
// Two element types are instantiated: float for training and inference,
// double for finite-difference gradient checking.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xst {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Write access is reserved for leaves: parameters updated by an
  // optimizer, or inputs perturbed by a gradient check.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();
  // Drops the gradient buffer so has_grad() is false until the next backward.
  void release_grad() { node_->grad.clear(); }

  // A detached copy: fresh node, same values, no gradient.
  Tensor clone() const;

  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }
  const TensorNode<T>* identity() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Ordered record of executed operations. Entries are appended in forward
// execution order; backward() walks them in reverse.
template <typename T>
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  void record(std::shared_ptr<TensorNode<T>> output, BackwardRule rule);
  std::size_t size() const { return entries_.size(); }
  bool produced(const TensorNode<T>* node) const;
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<T>> output;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;

  template <typename U>
  friend void backward(Tape<U>& tape, const Tensor<U>& loss);
};

template <typename T>
Tape<T>* active_tape();

// Installs a tape as the active one for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording for the current thread (inference).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
// Gradients accumulate into existing buffers. Throws if loss is not a
// scalar or was not produced on this tape.
template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss);

}  // namespace xst
