#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// Architecture of the widened U-Net.
///
/// Level i (0 = full resolution, depth-1 = bottleneck) carries
///   base_channels * 2^i                              if widen_factor == 1
///   max(1, round(base_channels * widen_factor * 2^i)) otherwise
/// channels, so widen_factor = 1.5 turns the classic 64..1024 schedule into
/// 96..1536.
struct UNetConfig {
  int depth = 5;
  int base_channels = 64;
  double widen_factor = 1.5;
  int in_channels = 3;
  int input_size = 256;

  /// Throws ConfigError when a field is out of range or input_size is not a
  /// multiple of 2^(depth-1).
  void validate() const;

  std::vector<std::size_t> level_channels() const;

  /// Spatial sizes must be multiples of this.
  std::size_t size_divisor() const { return std::size_t{1} << (depth - 1); }

  bool operator==(const UNetConfig&) const = default;
};

/// Number of scalar parameters, in closed form. With c_i the level channels,
/// cin_0 = in_channels and cin_i = c_{i-1}:
///
///   encoder    sum_{i<D}   9*cin_i*c_i + 9*c_i^2 + 2*c_i
///   decoder    sum_{i<D-1} 4*c_{i+1}*c_i + 18*c_i^2 + 9*c_i^2 + 3*c_i
///   head       c_0 + 1
std::size_t count_parameters(const UNetConfig& config);

/// Names and shapes of every parameter tensor in forward order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const UNetConfig& config);

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
class BasicUNet {
 public:
  /// He-uniform weights (bound sqrt(6 / fan_in)) drawn in layout order from
  /// a stream seeded with `seed`; zero biases.
  static BasicUNet build(const UNetConfig& config, std::uint64_t seed);

  /// Adopts existing tensors; names and shapes must match parameter_layout.
  BasicUNet(UNetConfig config, std::vector<NamedParameter<T>> parameters);

  /// [N,in_channels,H,W] -> [N,1,H,W] crack probabilities in (0,1).
  BasicTensor<T> forward(const BasicTensor<T>& batch) const;

  const UNetConfig& config() const { return config_; }
  std::span<const NamedParameter<T>> named_parameters() const { return params_; }
  std::vector<BasicTensor<T>> parameters() const;
  const BasicTensor<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  struct Conv {
    const BasicTensor<T>* weight;
    const BasicTensor<T>* bias;
  };
  Conv layer(std::size_t index) const;

  UNetConfig config_;
  std::vector<NamedParameter<T>> params_;
};

using UNet = BasicUNet<float>;
using UNet64 = BasicUNet<double>;

}  // namespace crackseg
