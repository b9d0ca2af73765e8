#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "crackseg/datapipe.hpp"
#include "crackseg/image.hpp"
#include "json.hpp"

namespace crackseg {

/// Appearance of a synthetic pavement corpus. Style A is bright and sharp
/// with strong cracks; style B is darker, blurred and low contrast.
struct SynthStyle {
  std::string name;
  double background_mean = 0;         // gray level
  double background_noise_sigma = 0;  // per-pixel gaussian noise
  double texture_amplitude = 0;       // low-frequency shading
  double crack_darkness = 0;          // gray levels subtracted on crack pixels
  int crack_width_min = 1;
  int crack_width_max = 1;
  int blur_radius = 0;                // box blur, image only
  double contrast_scale = 1.0;        // applied about background_mean
  double crack_free_fraction = 0.1;
  double branch_probability = 0.3;

  static SynthStyle A();
  static SynthStyle B();
  /// "A" or "B"; throws ConfigError otherwise.
  static SynthStyle by_name(const std::string& name);

  double effective_contrast() const;
  nlohmann::json to_json() const;
};

struct SynthSample {
  Raster image;  // 1 channel
  Raster mask;   // 1 channel, 255 on crack pixels
  bool has_crack = false;
  bool branched = false;
  int crack_width = 0;
};

/// Deterministic in (style, size, seed). size >= 64.
SynthSample generate(const SynthStyle& style, int size, std::uint64_t seed);

/// Writes img_NNNNN.png / mask_NNNNN.png pairs and manifest.jsonl into
/// out_dir. Sample i uses a seed derived from (seed, style, i). All samples
/// are tagged with the style name and the train split.
DatasetManifest generate_corpus(const SynthStyle& style, int count, int size, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

std::uint64_t sample_seed(const SynthStyle& style, std::uint64_t corpus_seed, std::uint64_t index);

}  // namespace crackseg
