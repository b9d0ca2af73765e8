#include "crackseg/unet.hpp"

#include <cmath>

#include "crackseg/ops.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

void UNetConfig::validate() const {
  if (depth < 2 || depth > 16) throw ConfigError("depth must be in [2,16], got " + std::to_string(depth));
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (!(widen_factor > 0.0) || !std::isfinite(widen_factor)) {
    throw ConfigError("widen_factor must be a positive finite number");
  }
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (input_size < 1 || static_cast<std::size_t>(input_size) % size_divisor() != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^(depth-1) = " +
                      std::to_string(size_divisor()));
  }
}

std::vector<std::size_t> UNetConfig::level_channels() const {
  std::vector<std::size_t> channels;
  for (int i = 0; i < depth; ++i) {
    const double scale = std::ldexp(1.0, i);
    if (widen_factor == 1.0) {
      channels.push_back(static_cast<std::size_t>(base_channels) << i);
    } else {
      const long c = std::lround(base_channels * widen_factor * scale);
      channels.push_back(static_cast<std::size_t>(std::max(1L, c)));
    }
  }
  return channels;
}

std::size_t count_parameters(const UNetConfig& config) {
  config.validate();
  const auto c = config.level_channels();
  const std::size_t depth = c.size();
  std::size_t total = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t cin = i == 0 ? static_cast<std::size_t>(config.in_channels) : c[i - 1];
    total += 9 * cin * c[i] + 9 * c[i] * c[i] + 2 * c[i];
  }
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    total += 4 * c[i + 1] * c[i] + 27 * c[i] * c[i] + 3 * c[i];
  }
  return total + c[0] + 1;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const UNetConfig& config) {
  config.validate();
  const auto c = config.level_channels();
  const std::size_t depth = c.size();
  std::vector<std::pair<std::string, Shape>> layout;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
    layout.emplace_back(name + ".weight", Shape{cout, cin, k, k});
    layout.emplace_back(name + ".bias", Shape{cout});
  };
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t cin = i == 0 ? static_cast<std::size_t>(config.in_channels) : c[i - 1];
    const std::string prefix = "enc" + std::to_string(i);
    conv(prefix + ".conv1", c[i], cin, 3);
    conv(prefix + ".conv2", c[i], c[i], 3);
  }
  for (std::size_t i = depth - 1; i-- > 0;) {
    const std::string prefix = "dec" + std::to_string(i);
    conv(prefix + ".up", c[i], c[i + 1], 2);
    conv(prefix + ".conv1", c[i], 2 * c[i], 3);
    conv(prefix + ".conv2", c[i], c[i], 3);
  }
  conv("head", 1, c[0], 1);
  return layout;
}

template <typename T>
BasicUNet<T> BasicUNet<T>::build(const UNetConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedParameter<T>> params;
  for (auto& [name, shape] : parameter_layout(config)) {
    std::vector<T> values(shape_numel(shape), T(0));
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.push_back({name, BasicTensor<T>(shape, std::move(values), true)});
  }
  return BasicUNet(config, std::move(params));
}

template <typename T>
BasicUNet<T>::BasicUNet(UNetConfig config, std::vector<NamedParameter<T>> parameters)
    : config_(config), params_(std::move(parameters)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ConfigError("expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].name != layout[i].first || params_[i].tensor.shape() != layout[i].second) {
      throw ConfigError("parameter " + std::to_string(i) + " is " + params_[i].name + " " +
                        shape_string(params_[i].tensor.shape()) + ", expected " + layout[i].first +
                        " " + shape_string(layout[i].second));
    }
  }
}

template <typename T>
typename BasicUNet<T>::Conv BasicUNet<T>::layer(std::size_t index) const {
  return {&params_[2 * index].tensor, &params_[2 * index + 1].tensor};
}

template <typename T>
BasicTensor<T> BasicUNet<T>::forward(const BasicTensor<T>& batch) const {
  if (!batch.defined() || batch.ndim() != 4) throw ShapeError("forward expects a 4-D [N,C,H,W] batch");
  if (batch.dim(1) != static_cast<std::size_t>(config_.in_channels)) {
    throw ShapeError("forward: model takes " + std::to_string(config_.in_channels) +
                     " input channels, batch has " + std::to_string(batch.dim(1)));
  }
  const std::size_t divisor = config_.size_divisor();
  if (batch.dim(2) == 0 || batch.dim(3) == 0 || batch.dim(2) % divisor || batch.dim(3) % divisor) {
    throw ShapeError("forward: spatial size " + std::to_string(batch.dim(2)) + "x" +
                     std::to_string(batch.dim(3)) + " must be a nonzero multiple of " +
                     std::to_string(divisor));
  }
  const std::size_t depth = static_cast<std::size_t>(config_.depth);
  std::size_t next = 0;
  auto conv_relu = [&](const BasicTensor<T>& x) {
    const Conv c = layer(next++);
    return relu(conv2d(x, *c.weight, *c.bias, Padding::same));
  };

  BasicTensor<T> x = batch;
  std::vector<BasicTensor<T>> skips;
  for (std::size_t i = 0; i < depth; ++i) {
    x = conv_relu(x);
    x = conv_relu(x);
    if (i + 1 < depth) {
      skips.push_back(x);
      x = maxpool2(x);
    }
  }
  for (std::size_t i = depth - 1; i-- > 0;) {
    const Conv up = layer(next++);
    x = relu(upconv2(x, *up.weight, *up.bias));
    x = concat_channels(skips[i], x);
    x = conv_relu(x);
    x = conv_relu(x);
  }
  const Conv head = layer(next++);
  return sigmoid(conv2d(x, *head.weight, *head.bias, Padding::same));
}

template <typename T>
std::vector<BasicTensor<T>> BasicUNet<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
const BasicTensor<T>& BasicUNet<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw Error("no parameter named " + std::string(name));
}

template <typename T>
std::size_t BasicUNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void BasicUNet<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class BasicUNet<float>;
template class BasicUNet<double>;

}  // namespace crackseg
