#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsmt/errors.hpp"

namespace fsmt {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
class TensorT;

// Lineage record for one producing operation. `backward` reads the output's
// gradient and accumulates into the inputs' gradients.
template <typename T>
struct AutogradNode {
  const char* op = "";
  std::vector<TensorT<T>> inputs;
  std::function<void(const TensorT<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool lineage_consumed = false;
  std::shared_ptr<AutogradNode<T>> node;
};

// Dense row-major n-d array with reverse-mode autodiff. Handle semantics:
// copies share the underlying storage. Values are immutable once produced
// by an op; gradient buffers accumulate, and parameter data is mutated only
// by the optimizer between steps.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  TensorT(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static TensorT ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)), value);
    return TensorT(std::move(shape), std::move(v), requires_grad);
  }
  static TensorT scalar(T value, bool requires_grad = false) {
    return TensorT(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }

  // Value of a scalar (or single-element) tensor.
  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  // Gradient accessors are const: TensorT is a shared-ownership handle, and
  // gradient accumulation mutates the shared buffer, not the handle.
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw AutogradError("grad: no gradient has been accumulated");
    return impl_->grad;
  }
  std::vector<T>& ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  void zero_grad() const {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  }

  void accumulate_grad(const T* g, std::int64_t n) const {
    if (n != numel()) {
      throw ShapeError("accumulate_grad: size mismatch " + std::to_string(n) +
                       " vs " + std::to_string(numel()));
    }
    std::vector<T>& dst = ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) dst[static_cast<std::size_t>(i)] += g[i];
  }

  std::shared_ptr<AutogradNode<T>> node() const { return impl_->node; }
  void set_node(std::shared_ptr<AutogradNode<T>> node) { impl_->node = std::move(node); }

  // Reverse-mode sweep from a scalar loss. Visits every producing op exactly
  // once in reverse topological order, accumulates dLoss/dX into every
  // reachable tensor with requires_grad, then releases the lineage.
  void backward() {
    if (!defined()) throw AutogradError("backward: undefined tensor");
    if (numel() != 1) {
      throw AutogradError("backward: loss must be scalar, got shape " +
                          shape_str(impl_->shape));
    }
    if (impl_->lineage_consumed) {
      throw AutogradError("backward: lineage was already consumed");
    }

    // Post-order DFS over the producing ops.
    std::vector<TensorT<T>> order;
    std::unordered_set<const TensorImpl<T>*> visited;
    struct Frame {
      TensorT<T> tensor;
      std::size_t next_input = 0;
    };
    std::vector<Frame> stack;
    stack.push_back(Frame{*this, 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
      Frame& fr = stack.back();
      auto node = fr.tensor.node();
      if (!node || fr.next_input >= node->inputs.size()) {
        if (node) order.push_back(fr.tensor);
        stack.pop_back();
        continue;
      }
      TensorT<T> input = node->inputs[fr.next_input++];
      if (input.defined() && input.node() && !visited.count(input.impl_.get())) {
        if (input.impl_->lineage_consumed) {
          throw AutogradError("backward: lineage was already consumed");
        }
        visited.insert(input.impl_.get());
        stack.push_back(Frame{input, 0});
      }
    }

    T seed = T(1);
    accumulate_grad(&seed, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto node = it->node();
      node->backward(*it);
    }
    for (auto& t : order) {
      t.impl_->lineage_consumed = true;
      t.impl_->node.reset();
    }
    impl_->lineage_consumed = true;
  }

  TensorImpl<T>* impl_ptr() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;
using DoubleTensor = TensorT<double>;

// A named trainable tensor slot inside a model. `decay` marks participation
// in weight decay (conv/linear weights only); `trainable` is false for
// batch-norm running statistics and other buffers.
template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* tensor = nullptr;
  bool decay = false;
  bool trainable = true;
};

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& t) {
  if constexpr (std::is_same_v<To, From>) {
    return t;
  } else {
    std::vector<To> out(t.data().begin(), t.data().end());
    return TensorT<To>(t.shape(), std::move(out), false);
  }
}

}  // namespace fsmt
