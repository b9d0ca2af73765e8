#include "crackseg/adam.hpp"

#include <cmath>
#include <string>

namespace crackseg {

template <typename T>
AdamState<T> AdamState<T>::for_parameters(std::span<const BasicTensor<T>> params) {
  AdamState state;
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), T(0));
    state.v.emplace_back(p.numel(), T(0));
  }
  return state;
}

template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state, const AdamOptions& options) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters but " + std::to_string(params.size()) + " were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: moment buffers for parameter " + std::to_string(i) +
                       " do not match its shape " + shape_string(params[i].shape()));
    }
  }
  const std::int64_t t = ++state.step;
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(options.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(options.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(options.learning_rate);
  const T eps = static_cast<T>(options.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    detail::ensure_finite(std::span<const T>(w), "adam_step");
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<BasicTensor<float>>, AdamState<float>&, const AdamOptions&);
template void adam_step(std::span<BasicTensor<double>>, AdamState<double>&, const AdamOptions&);

}  // namespace crackseg
