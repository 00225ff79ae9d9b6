#pragma once

// Dense row-major tensors with a dynamically recorded reverse-mode graph.
//
// A Tensor is a shared handle to a Node. Operations in ops.hpp create new
// nodes and, when any input requires a gradient and recording is enabled,
// attach a backward closure plus the parent handles it needs. backward()
// walks the graph once in reverse topological order and then releases it.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "codexl/errors.hpp"

namespace codexl {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Zero-initialized on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Only leaves (parameters, inputs) should be written through this.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Unreached leaves report an all-zero gradient.
  std::span<T> grad() const { return node_->grad_buffer(); }
  void zero_grad() const;

  // Same values, no history, never requires grad: the stop-gradient boundary.
  Tensor detach() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

// Populates grads of every reachable leaf that requires grad, then frees the
// recorded graph. Throws ShapeError for non-scalar losses and NumericError
// for a non-finite loss.
template <typename T>
void backward(const Tensor<T>& loss);

// Recording is enabled by default; this disables it for the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what);

template <typename T>
void zero_grads(const ParameterList<T>& params);

template <typename T>
std::size_t count_parameters(const ParameterList<T>& params);

}  // namespace codexl
