#include "codexl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace codexl {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_recording_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, fill), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
void Tensor<T>::zero_grad() const {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("backward() on a non-finite loss");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  // Owning handles: releasing a node's closure may drop the last other
  // reference to its parents, which are still to be visited.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      auto parent = top.first->parents[top.second++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    if (node->backward_fn) {
      // Interior node: release history and its gradient buffer.
      node->backward_fn = nullptr;
      node->parents.clear();
      if (node != loss.node()) {
        node->grad.clear();
        node->grad.shrink_to_fit();
      }
    }
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what) {
  for (T v : t.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite value in " + what);
  }
}

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (const auto& p : params) p.tensor.zero_grad();
}

template <typename T>
std::size_t count_parameters(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

#define CODEXL_INSTANTIATE(T)                                               \
  template class Tensor<T>;                                                 \
  template void backward<T>(const Tensor<T>&);                              \
  template void check_finite<T>(const Tensor<T>&, const std::string&);      \
  template void zero_grads<T>(const ParameterList<T>&);                     \
  template std::size_t count_parameters<T>(const ParameterList<T>&);

CODEXL_INSTANTIATE(float)
CODEXL_INSTANTIATE(double)
#undef CODEXL_INSTANTIATE

}  // namespace codexl
