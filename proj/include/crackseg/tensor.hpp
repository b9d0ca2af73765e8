#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crackseg/errors.hpp"

namespace crackseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient has been accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

/// One recorded operation. `backward` receives the gradient with respect to
/// the node's output and accumulates into the gradients of `inputs`.
template <typename T>
struct Node {
  std::string op;
  std::vector<BasicTensor<T>> inputs;
  std::function<void(std::span<const T>)> backward;
};

/// Throws NumericError if any value is NaN or Inf.
template <typename T>
void ensure_finite(std::span<const T> values, const std::string& where);

}  // namespace detail

/// Whether newly created op outputs record a backward node (per thread).
bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with optional gradient tracking. Copies share
/// storage (handle semantics); use clone() for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  /// Element of a 4-D [N,C,H,W] tensor.
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const detail::Node<T>* grad_fn() const { return impl_->grad_fn.get(); }

  /// Reverse-mode pass from this scalar. Errors if any reachable leaf
  /// already holds a gradient: gradients never silently accumulate across
  /// calls.
  void backward() const;

  BasicTensor clone() const;
  /// Same storage, no graph history.
  BasicTensor detach() const;

  bool same_as(const BasicTensor& other) const { return impl_ == other.impl_; }

  // Internals used by ops.
  detail::TensorImpl<T>& impl() const { return *impl_; }
  std::span<T> grad_buffer() const;

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Every tensor reachable from `root` through recorded nodes, ordered so
/// that each tensor appears after all of its inputs. Each appears once.
template <typename T>
std::vector<BasicTensor<T>> topological_order(const BasicTensor<T>& root);

/// Attach a backward node to `out` if grad mode is on and any input needs
/// gradients.
template <typename T>
void record(BasicTensor<T>& out, std::string op, std::vector<BasicTensor<T>> inputs,
            std::function<void(std::span<const T>)> backward);

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& t) {
  std::vector<To> values(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.shape(), std::move(values), t.requires_grad());
}

}  // namespace crackseg
