#include "crackseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crackseg/rng.hpp"

namespace crackseg {

namespace fs = std::filesystem;

SynthStyle SynthStyle::A() {
  SynthStyle s;
  s.name = "A";
  s.background_mean = 165;
  s.background_noise_sigma = 10;
  s.texture_amplitude = 12;
  s.crack_darkness = 85;
  s.crack_width_min = 1;
  s.crack_width_max = 4;
  s.blur_radius = 0;
  s.contrast_scale = 1.0;
  return s;
}

SynthStyle SynthStyle::B() {
  SynthStyle s;
  s.name = "B";
  s.background_mean = 100;
  s.background_noise_sigma = 7;
  s.texture_amplitude = 8;
  s.crack_darkness = 55;
  s.crack_width_min = 1;
  s.crack_width_max = 3;
  s.blur_radius = 1;
  s.contrast_scale = 0.6;
  return s;
}

SynthStyle SynthStyle::by_name(const std::string& name) {
  if (name == "A") return A();
  if (name == "B") return B();
  throw ConfigError("unknown synthetic style '" + name + "' (expected A or B)");
}

double SynthStyle::effective_contrast() const { return std::abs(crack_darkness * contrast_scale); }

nlohmann::json SynthStyle::to_json() const {
  return {{"name", name},
          {"background_mean", background_mean},
          {"background_noise_sigma", background_noise_sigma},
          {"texture_amplitude", texture_amplitude},
          {"crack_darkness", crack_darkness},
          {"crack_width_min", crack_width_min},
          {"crack_width_max", crack_width_max},
          {"blur_radius", blur_radius},
          {"contrast_scale", contrast_scale},
          {"crack_free_fraction", crack_free_fraction},
          {"branch_probability", branch_probability}};
}

std::uint64_t sample_seed(const SynthStyle& style, std::uint64_t corpus_seed, std::uint64_t index) {
  std::uint64_t tag = 0xcbf29ce484222325ULL;
  for (unsigned char c : style.name) tag = (tag ^ c) * 0x100000001b3ULL;
  return derive_seed(corpus_seed ^ tag, index);
}

namespace {

constexpr double kPi = std::numbers::pi;

class CrackCanvas {
 public:
  explicit CrackCanvas(int size) : size_(size), mask_(static_cast<std::size_t>(size) * size, 0) {}

  std::size_t count() const { return count_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

  void stamp(double px, double py, int width) {
    const int x0 = static_cast<int>(std::lround(px)) - (width - 1) / 2;
    const int y0 = static_cast<int>(std::lround(py)) - (width - 1) / 2;
    for (int y = y0; y < y0 + width; ++y) {
      for (int x = x0; x < x0 + width; ++x) {
        if (x < 0 || y < 0 || x >= size_ || y >= size_) continue;
        auto& m = mask_[static_cast<std::size_t>(y) * size_ + x];
        if (!m) {
          m = 1;
          ++count_;
        }
      }
    }
  }

  /// Bounded random walk with heading persistence; reflects off the borders.
  /// Stops once `target` new pixels are marked or after a step cap. Returns
  /// the visited points.
  std::vector<std::pair<double, double>> walk(Rng& rng, double x, double y, double heading, int width,
                                              std::size_t target) {
    std::vector<std::pair<double, double>> points;
    const std::size_t start = count_;
    const double hi = size_ - 1;
    const int max_steps = 6 * size_;
    for (int step = 0; step < max_steps && count_ - start < target; ++step) {
      stamp(x, y, width);
      points.emplace_back(x, y);
      heading += 0.15 * rng.normal();
      x += std::cos(heading);
      y += std::sin(heading);
      if (x < 0 || x > hi) {
        x = std::clamp(x < 0 ? -x : 2 * hi - x, 0.0, hi);
        heading = kPi - heading;
      }
      if (y < 0 || y > hi) {
        y = std::clamp(y < 0 ? -y : 2 * hi - y, 0.0, hi);
        heading = -heading;
      }
    }
    return points;
  }

 private:
  int size_;
  std::vector<std::uint8_t> mask_;
  std::size_t count_ = 0;
};

std::vector<double> box_blur(const std::vector<double>& in, int size, int radius) {
  if (radius <= 0) return in;
  auto pass = [&](const std::vector<double>& src, bool horizontal) {
    std::vector<double> dst(src.size());
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double acc = 0;
        for (int d = -radius; d <= radius; ++d) {
          const int sx = horizontal ? std::clamp(x + d, 0, size - 1) : x;
          const int sy = horizontal ? y : std::clamp(y + d, 0, size - 1);
          acc += src[static_cast<std::size_t>(sy) * size + sx];
        }
        dst[static_cast<std::size_t>(y) * size + x] = acc / (2 * radius + 1);
      }
    }
    return dst;
  };
  return pass(pass(in, true), false);
}

}  // namespace

SynthSample generate(const SynthStyle& style, int size, std::uint64_t seed) {
  if (size < 64) throw ConfigError("synthetic image size must be >= 64, got " + std::to_string(size));
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(size) * size;

  // Shading: three random low-frequency plane waves.
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (auto& w : waves) {
    const double angle = rng.uniform(0, 2 * kPi);
    const double freq = rng.uniform(0.5, 3.0) * 2 * kPi / size;
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0, 2 * kPi),
         style.texture_amplitude * rng.uniform(0.3, 1.0) / 3.0};
  }
  std::vector<double> img(n);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = style.background_mean;
      for (const auto& w : waves) v += w.amp * std::cos(w.fx * x + w.fy * y + w.phase);
      img[static_cast<std::size_t>(y) * size + x] = v + style.background_noise_sigma * rng.normal();
    }
  }

  SynthSample out;
  CrackCanvas canvas(size);
  out.has_crack = !rng.bernoulli(style.crack_free_fraction);
  if (out.has_crack) {
    const int width = static_cast<int>(rng.range(style.crack_width_min, style.crack_width_max));
    out.crack_width = width;
    const double lo = 0.1 * size, hi = 0.9 * size;
    const double length = rng.uniform(1.0, 1.5) * size;
    const auto target = static_cast<std::size_t>(std::ceil(length * width));
    const double heading = rng.uniform(0, 2 * kPi);
    const auto points = canvas.walk(rng, rng.uniform(lo, hi), rng.uniform(lo, hi), heading, width, target);
    if (rng.bernoulli(style.branch_probability) && !points.empty()) {
      out.branched = true;
      const auto& [bx, by] = points[rng.below(points.size())];
      const double turn = rng.uniform(0.5, 1.2) * (rng.bernoulli(0.5) ? 1 : -1);
      canvas.walk(rng, bx, by, heading + turn, std::max(1, width - 1), target / 2);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (canvas.mask()[i]) img[i] -= style.crack_darkness * rng.uniform(0.8, 1.2);
    }
  }

  img = box_blur(img, size, style.blur_radius);
  out.image = Raster(size, size, 1);
  out.mask = Raster(size, size, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = style.background_mean + (img[i] - style.background_mean) * style.contrast_scale;
    out.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    out.mask.pixels[i] = canvas.mask()[i] ? 255 : 0;
  }
  return out;
}

DatasetManifest generate_corpus(const SynthStyle& style, int count, int size, std::uint64_t seed,
                                const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.name = "synth_" + style.name;
  manifest.params = {{"style", style.to_json()}, {"count", count}, {"size", size}, {"seed", seed}};
  for (int i = 0; i < count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05d.png", i);
    const fs::path image_path = out_dir / ("img_" + std::string(stem));
    const fs::path mask_path = out_dir / ("mask_" + std::string(stem));
    const SynthSample s = generate(style, size, sample_seed(style, seed, static_cast<std::uint64_t>(i)));
    write_png(image_path, s.image);
    write_png(mask_path, s.mask);
    manifest.samples.push_back({image_path, mask_path, style.name, Split::train});
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace crackseg
