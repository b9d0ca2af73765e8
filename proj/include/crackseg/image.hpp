#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace crackseg {

/// 8-bit raster, channels interleaved per pixel, rows top to bottom.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Raster&) const = default;
};

/// Decodes PNG or JPEG into 1 (gray) or 3 (RGB) channels; alpha is dropped.
Raster read_image(const std::filesystem::path& path);

/// Decodes and converts to a single gray channel.
Raster read_gray(const std::filesystem::path& path);

/// Writes a gray (1 channel) or RGB (3 channel) 8-bit PNG.
void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace crackseg
