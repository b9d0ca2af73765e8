#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crackseg/image.hpp"
#include "crackseg/tensor.hpp"
#include "json.hpp"

namespace crackseg {

enum class Split { train, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view text);

struct Sample {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;  // absent for inference-only inputs
  std::string source_tag;
  Split split = Split::train;

  bool operator==(const Sample&) const = default;
};

/// Image/mask listing with per-sample source tag and split.
///
/// On disk this is JSON Lines: an optional first record
///   {"manifest": {"name": ..., "params": {...}}}
/// followed by one record per sample
///   {"image": "a.png", "mask": "a_mask.png", "source": "A", "split": "train"}
/// Relative paths resolve against the manifest's directory; "mask" may be
/// omitted or null.
struct DatasetManifest {
  std::string name;
  nlohmann::json params = nlohmann::json::object();
  std::vector<Sample> samples;

  /// Throws DataError on duplicate image paths.
  void validate() const;
  std::size_t count(std::string_view source, Split split) const;
  std::map<std::pair<std::string, Split>, std::size_t> counts() const;
  std::vector<Sample> select(Split split) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
/// Paths under the manifest's directory are written relative to it.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Concatenates sample lists; rejects duplicate image paths.
DatasetManifest merge_manifests(std::span<const DatasetManifest> manifests, std::string name);

// --- tiling -----------------------------------------------------------------

enum class RemainderPolicy { drop };

struct TileSpec {
  int tile_size = 256;
  RemainderPolicy remainder = RemainderPolicy::drop;
};

struct Tile {
  Raster raster;
  int x = 0;  // origin column in the source image
  int y = 0;  // origin row
};

/// Regular grid of tile_size squares from (0,0) with stride tile_size; partial
/// tiles at the right and bottom edges are dropped.
std::vector<Tile> tile_image(const Raster& image, const TileSpec& spec);

/// Inverse of tile_image. Pixels not covered by any tile are 0. Tiles must
/// lie inside the canvas and must not overlap.
Raster stitch_predictions(std::span<const Tile> tiles, int width, int height);

/// "tile_x<X>_y<Y>.png"
std::string tile_name(int x, int y);
std::optional<std::pair<int, int>> parse_tile_name(std::string_view name);

// --- sample loading ---------------------------------------------------------

/// [1,C,H,W] with values raw/255.
Tensor image_to_tensor(const Raster& image);
/// Single-channel raster to a [1,1,H,W] 0/1 tensor: value > 127 -> 1.
Tensor binarize_mask(const Raster& mask);

inline constexpr std::uint8_t kMaskThreshold = 127;

struct LoadedSample {
  Tensor image;
  Tensor mask;  // undefined when the sample has no mask
};

LoadedSample load_sample(const Sample& sample);

// --- augmentation -----------------------------------------------------------

/// The eight symmetries of the square. Rotations are counter-clockwise.
enum class Dihedral : std::uint8_t {
  identity,
  flip_horizontal,
  flip_vertical,
  rotate90,
  rotate180,
  rotate270,
  transpose,
  anti_transpose,
};

inline constexpr int kDihedralCount = 8;

/// Uniform draw from the eight transforms, a pure function of `seed`.
Dihedral draw_transform(std::uint64_t seed);

/// Source pixel (row, column) for output pixel (y, x) of an h x w input.
std::pair<std::size_t, std::size_t> dihedral_source(Dihedral t, std::size_t h, std::size_t w,
                                                    std::size_t y, std::size_t x);

/// Applies `t` to every [H,W] plane of a 4-D tensor.
Tensor apply_transform(const Tensor& input, Dihedral t);
Raster apply_transform(const Raster& input, Dihedral t);

struct Augmented {
  Tensor image;
  Tensor mask;
  Dihedral transform;
};

/// Same randomly drawn transform applied to image and mask.
Augmented augment(const Tensor& image, const Tensor& mask, std::uint64_t seed);

// --- splits -----------------------------------------------------------------

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// For each requested source: seeded shuffle of its samples (manifest order
/// first), then the first `train` become train and the next `test` become
/// test. Sources not named in `request` are left out.
DatasetManifest make_splits(const DatasetManifest& manifest,
                            const std::map<std::string, SplitCounts>& request, std::uint64_t seed);

}  // namespace crackseg
