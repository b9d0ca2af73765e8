#include "crackseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "crackseg/rng.hpp"

namespace crackseg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
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

std::uint64_t Rng::below(std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw Error("invalid random state snapshot");
}

namespace detail {

template <typename T>
void ensure_finite(std::span<const T> values, const std::string& where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value at element " + std::to_string(i) + " in " + where);
    }
  }
}

}  // namespace detail

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values but " +
                     std::to_string(data.size()) + " were given");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_numel(shape), value);
  return BasicTensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  const auto& s = impl_->shape;
  if (s.size() != 4) throw ShapeError("at() needs a 4-D tensor, got " + shape_string(s));
  return impl_->data[((n * s[1] + c) * s[2] + y) * s[3] + x];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw GradError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
}

template <typename T>
std::span<T> BasicTensor<T>::grad_buffer() const {
  if (!impl_->requires_grad) return {};
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data, impl_->requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  BasicTensor out;
  out.impl_ = std::make_shared<detail::TensorImpl<T>>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> topological_order(const BasicTensor<T>& root) {
  std::vector<BasicTensor<T>> order;
  std::unordered_set<const detail::TensorImpl<T>*> visited;
  // Iterative post-order DFS: (tensor, next input index).
  std::vector<std::pair<BasicTensor<T>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(&root.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto* node = t.grad_fn();
    if (node && next < node->inputs.size()) {
      const auto& in = node->inputs[next++];
      if (visited.insert(&in.impl()).second) stack.emplace_back(in, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }
  return order;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw GradError("backward() needs a scalar loss, got shape " + shape_string(shape()));
  }
  if (!requires_grad()) throw GradError("backward() on a tensor that does not require grad");
  auto order = topological_order(*this);
  for (const auto& t : order) {
    if (t.is_leaf() && t.requires_grad() && t.has_grad()) {
      throw GradError("backward() called while leaf gradients are populated; call zero_grad() first");
    }
  }
  grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& t = *it;
    auto* node = t.impl().grad_fn.get();
    if (!node || !t.has_grad()) continue;
    node->backward(t.grad());
    for (const auto& in : node->inputs) {
      if (in.has_grad()) detail::ensure_finite(in.grad(), "backward of " + node->op);
    }
    // Interior gradients are transient.
    t.impl().grad.clear();
    t.impl().grad.shrink_to_fit();
  }
}

template <typename T>
void record(BasicTensor<T>& out, std::string op, std::vector<BasicTensor<T>> inputs,
            std::function<void(std::span<const T>)> backward) {
  detail::ensure_finite(std::span<const T>(out.data()), op);
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return;
  auto node = std::make_shared<detail::Node<T>>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl().requires_grad = true;
  out.impl().grad_fn = std::move(node);
}

#define CRACKSEG_INSTANTIATE(T)                                                          \
  template class BasicTensor<T>;                                                         \
  template std::vector<BasicTensor<T>> topological_order(const BasicTensor<T>&);         \
  template void record(BasicTensor<T>&, std::string, std::vector<BasicTensor<T>>,        \
                       std::function<void(std::span<const T>)>);                         \
  template void detail::ensure_finite(std::span<const T>, const std::string&);

CRACKSEG_INSTANTIATE(float)
CRACKSEG_INSTANTIATE(double)

}  // namespace crackseg
