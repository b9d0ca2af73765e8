#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment buffers, one pair per parameter, plus the number
/// of completed steps.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;

  /// Zeroed buffers shaped like `params`.
  static AdamState for_parameters(std::span<const BasicTensor<T>> params);
};

/// One bias-corrected Adam update using each parameter's accumulated
/// gradient. Parameters without a gradient are left untouched (their moments
/// are not advanced). Increments state.step before applying, so the first
/// call uses t = 1.
template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state, const AdamOptions& options);

}  // namespace crackseg
