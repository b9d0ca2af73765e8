#pragma once

#include <vector>

#include "crackseg/datapipe.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/trainer.hpp"

namespace crackseg::testing {

inline UNetConfig tiny_unet(int size = 16, int base = 2) {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = base;
  c.widen_factor = 1.0;
  c.in_channels = 1;
  c.input_size = size;
  return c;
}

/// Random images with a bright diagonal-ish stripe as the "crack".
inline std::vector<LoadedSample> stripe_samples(std::size_t count, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LoadedSample> out;
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<float> img(size * size), mask(size * size);
    const std::size_t offset = rng.below(size);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const bool crack = (x + offset) % size == y;
        mask[y * size + x] = crack ? 1.0f : 0.0f;
        img[y * size + x] = static_cast<float>(crack ? rng.uniform(0.0, 0.3) : rng.uniform(0.5, 1.0));
      }
    }
    out.push_back({Tensor({1, 1, size, size}, img), Tensor({1, 1, size, size}, mask)});
  }
  return out;
}

inline std::vector<float> flat_parameters(const UNet& model) {
  std::vector<float> out;
  for (const auto& p : model.named_parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace crackseg::testing
