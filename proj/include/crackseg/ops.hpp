#pragma once

#include "crackseg/tensor.hpp"

namespace crackseg {

enum class Padding {
  same,   // zero padding, output spatial size equals input; for even kernels
          // the extra row/column of padding goes on the bottom/right
  valid,  // no padding
};

/// Cross-correlation, stride 1. input [N,Cin,H,W], weight [Cout,Cin,kh,kw],
/// bias [Cout].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Padding padding);

/// 2x2 max pooling, stride 2. Ties resolve to the first element of the
/// window in row-major order, which also receives the gradient.
template <typename T>
BasicTensor<T> maxpool2(const BasicTensor<T>& input);

/// Nearest-neighbour 2x upsampling.
template <typename T>
BasicTensor<T> upsample2(const BasicTensor<T>& input);

/// Up-convolution: upsample2 followed by a same-padded 2x2 convolution.
/// weight [C',C,2,2], bias [C'].
template <typename T>
BasicTensor<T> upconv2(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                       const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, end) of a 4-D tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::size_t begin, std::size_t end);

/// relu'(0) is taken as 0.
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Output is kept strictly inside (0,1) even where the logistic saturates
/// in floating point.
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy. Predictions are clamped into [eps, 1-eps]
/// before the logarithms; the gradient is evaluated at the clamped value and
/// passed straight through the clamp. Targets must be exactly 0 or 1.
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                        double eps = kBceEpsilon);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input);

/// Elementwise product of equally shaped tensors.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace crackseg
