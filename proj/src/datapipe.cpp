#include "crackseg/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include "crackseg/rng.hpp"

namespace crackseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw DataError("split must be 'train' or 'test', got '" + std::string(text) + "'");
}

void DatasetManifest::validate() const {
  std::set<fs::path> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.image_path.lexically_normal()).second) {
      throw DataError("manifest '" + name + "' lists " + s.image_path.string() + " more than once");
    }
  }
}

std::size_t DatasetManifest::count(std::string_view source, Split split) const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](const Sample& s) {
    return s.source_tag == source && s.split == split;
  }));
}

std::map<std::pair<std::string, Split>, std::size_t> DatasetManifest::counts() const {
  std::map<std::pair<std::string, Split>, std::size_t> out;
  for (const auto& s : samples) ++out[{s.source_tag, s.split}];
  return out;
}

std::vector<Sample> DatasetManifest::select(Split split) const {
  std::vector<Sample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [&](const Sample& s) { return s.split == split; });
  return out;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : (base / q).lexically_normal();
  };
  DatasetManifest manifest;
  manifest.name = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (record.contains("manifest")) {
        const auto& meta = record.at("manifest");
        manifest.name = meta.value("name", manifest.name);
        if (meta.contains("params")) manifest.params = meta.at("params");
        continue;
      }
      Sample s;
      s.image_path = resolve(record.at("image").get<std::string>());
      if (record.contains("mask") && !record.at("mask").is_null()) {
        s.mask_path = resolve(record.at("mask").get<std::string>());
      }
      s.source_tag = record.value("source", std::string());
      s.split = parse_split(record.value("split", std::string("train")));
      manifest.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  manifest.validate();
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  const fs::path base = fs::absolute(path).parent_path();
  auto relative = [&](const fs::path& p) {
    const fs::path abs = fs::absolute(p).lexically_normal();
    const fs::path rel = abs.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return abs.generic_string();
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << json{{"manifest", {{"name", manifest.name}, {"params", manifest.params}}}}.dump() << '\n';
  for (const auto& s : manifest.samples) {
    json record = {{"image", relative(s.image_path)},
                   {"mask", s.mask_path ? json(relative(*s.mask_path)) : json(nullptr)},
                   {"source", s.source_tag},
                   {"split", split_name(s.split)}};
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest merge_manifests(std::span<const DatasetManifest> manifests, std::string name) {
  DatasetManifest merged;
  merged.name = std::move(name);
  merged.params = json::array();
  for (const auto& m : manifests) {
    merged.params.push_back({{"name", m.name}, {"params", m.params}});
    merged.samples.insert(merged.samples.end(), m.samples.begin(), m.samples.end());
  }
  merged.validate();
  return merged;
}

std::vector<Tile> tile_image(const Raster& image, const TileSpec& spec) {
  const int t = spec.tile_size;
  if (t <= 0) throw DataError("tile_size must be positive");
  if (image.width < t || image.height < t) {
    throw DataError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    ", smaller than the " + std::to_string(t) + "x" + std::to_string(t) + " tile size");
  }
  const int cols = image.width / t;
  const int rows = image.height / t;
  const std::size_t row_bytes = static_cast<std::size_t>(t) * image.channels;
  std::vector<Tile> tiles;
  tiles.reserve(static_cast<std::size_t>(cols) * rows);
  for (int j = 0; j < rows; ++j) {
    for (int i = 0; i < cols; ++i) {
      Tile tile{Raster(t, t, image.channels), i * t, j * t};
      for (int y = 0; y < t; ++y) {
        const auto* src = &image.pixels[(static_cast<std::size_t>(tile.y + y) * image.width + tile.x) *
                                        image.channels];
        std::copy(src, src + row_bytes, &tile.raster.pixels[y * row_bytes]);
      }
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

Raster stitch_predictions(std::span<const Tile> tiles, int width, int height) {
  const int channels = tiles.empty() ? 1 : tiles.front().raster.channels;
  Raster canvas(width, height, channels);
  std::vector<bool> covered(static_cast<std::size_t>(width) * height, false);
  for (const auto& tile : tiles) {
    const Raster& r = tile.raster;
    if (r.channels != channels) throw DataError("stitch: tiles have mixed channel counts");
    if (tile.x < 0 || tile.y < 0 || tile.x + r.width > width || tile.y + r.height > height) {
      throw DataError("stitch: tile at (" + std::to_string(tile.x) + "," + std::to_string(tile.y) +
                      ") of size " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                      " exceeds the " + std::to_string(width) + "x" + std::to_string(height) + " canvas");
    }
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) {
        const std::size_t cell = static_cast<std::size_t>(tile.y + y) * width + tile.x + x;
        if (covered[cell]) {
          throw DataError("stitch: tiles overlap at (" + std::to_string(tile.x + x) + "," +
                          std::to_string(tile.y + y) + ")");
        }
        covered[cell] = true;
        for (int c = 0; c < channels; ++c) canvas.at(tile.x + x, tile.y + y, c) = r.at(x, y, c);
      }
    }
  }
  return canvas;
}

std::string tile_name(int x, int y) {
  return "tile_x" + std::to_string(x) + "_y" + std::to_string(y) + ".png";
}

std::optional<std::pair<int, int>> parse_tile_name(std::string_view name) {
  auto number = [](std::string_view& s, int& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || ptr == s.data()) return false;
    s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
    return true;
  };
  auto consume = [](std::string_view& s, std::string_view token) {
    if (!s.starts_with(token)) return false;
    s.remove_prefix(token.size());
    return true;
  };
  int x = 0, y = 0;
  if (consume(name, "tile_x") && number(name, x) && consume(name, "_y") && number(name, y) &&
      name == ".png") {
    return std::make_pair(x, y);
  }
  return std::nullopt;
}

Tensor image_to_tensor(const Raster& image) {
  const std::size_t h = static_cast<std::size_t>(image.height);
  const std::size_t w = static_cast<std::size_t>(image.width);
  const std::size_t c = static_cast<std::size_t>(image.channels);
  std::vector<float> data(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      data[ch * h * w + i] = static_cast<float>(image.pixels[i * c + ch]) / 255.0f;
    }
  }
  return Tensor({1, c, h, w}, std::move(data));
}

Tensor binarize_mask(const Raster& mask) {
  if (mask.channels != 1) throw DataError("mask must be single-channel");
  std::vector<float> data(mask.pixels.size());
  std::transform(mask.pixels.begin(), mask.pixels.end(), data.begin(),
                 [](std::uint8_t v) { return v > kMaskThreshold ? 1.0f : 0.0f; });
  return Tensor({1, 1, static_cast<std::size_t>(mask.height), static_cast<std::size_t>(mask.width)},
                std::move(data));
}

LoadedSample load_sample(const Sample& sample) {
  const Raster image = read_image(sample.image_path);
  LoadedSample out{image_to_tensor(image), Tensor()};
  if (sample.mask_path) {
    const Raster mask = read_gray(*sample.mask_path);
    if (mask.width != image.width || mask.height != image.height) {
      throw DataError("mask " + sample.mask_path->string() + " is " + std::to_string(mask.width) + "x" +
                      std::to_string(mask.height) + " but image " + sample.image_path.string() +
                      " is " + std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    out.mask = binarize_mask(mask);
  }
  return out;
}

Dihedral draw_transform(std::uint64_t seed) {
  Rng rng(seed);
  return static_cast<Dihedral>(rng.below(kDihedralCount));
}

namespace {

bool swaps_axes(Dihedral t) {
  return t == Dihedral::rotate90 || t == Dihedral::rotate270 || t == Dihedral::transpose ||
         t == Dihedral::anti_transpose;
}

}  // namespace

std::pair<std::size_t, std::size_t> dihedral_source(Dihedral t, std::size_t h, std::size_t w,
                                                    std::size_t y, std::size_t x) {
  switch (t) {
    case Dihedral::identity:
      return {y, x};
    case Dihedral::flip_horizontal:
      return {y, w - 1 - x};
    case Dihedral::flip_vertical:
      return {h - 1 - y, x};
    case Dihedral::rotate90:
      return {x, w - 1 - y};
    case Dihedral::rotate180:
      return {h - 1 - y, w - 1 - x};
    case Dihedral::rotate270:
      return {h - 1 - x, y};
    case Dihedral::transpose:
      return {x, y};
    case Dihedral::anti_transpose:
      return {h - 1 - x, w - 1 - y};
  }
  return {y, x};
}

Tensor apply_transform(const Tensor& input, Dihedral t) {
  if (input.ndim() != 4) throw ShapeError("apply_transform expects a 4-D tensor");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t ho = swaps_axes(t) ? w : h;
  const std::size_t wo = swaps_axes(t) ? h : w;
  std::vector<float> out(input.numel());
  auto src = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        const auto [sy, sx] = dihedral_source(t, h, w, y, x);
        out[(p * ho + y) * wo + x] = src[(p * h + sy) * w + sx];
      }
    }
  }
  return Tensor({input.dim(0), input.dim(1), ho, wo}, std::move(out));
}

Raster apply_transform(const Raster& input, Dihedral t) {
  const std::size_t h = static_cast<std::size_t>(input.height);
  const std::size_t w = static_cast<std::size_t>(input.width);
  Raster out(static_cast<int>(swaps_axes(t) ? h : w), static_cast<int>(swaps_axes(t) ? w : h),
             input.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto [sy, sx] = dihedral_source(t, h, w, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      for (int c = 0; c < input.channels; ++c) {
        out.at(x, y, c) = input.at(static_cast<int>(sx), static_cast<int>(sy), c);
      }
    }
  }
  return out;
}

Augmented augment(const Tensor& image, const Tensor& mask, std::uint64_t seed) {
  if (image.ndim() != 4 || mask.ndim() != 4 || image.dim(2) != mask.dim(2) ||
      image.dim(3) != mask.dim(3)) {
    throw ShapeError("augment: image " + shape_string(image.shape()) + " and mask " +
                     shape_string(mask.shape()) + " must share spatial dimensions");
  }
  const Dihedral t = draw_transform(seed);
  return {apply_transform(image, t), apply_transform(mask, t), t};
}

DatasetManifest make_splits(const DatasetManifest& manifest,
                            const std::map<std::string, SplitCounts>& request, std::uint64_t seed) {
  DatasetManifest out;
  out.name = manifest.name + "_split";
  out.params = {{"source_manifest", manifest.name}, {"seed", seed}, {"counts", json::object()}};
  Rng rng(seed);
  for (const auto& [source, want] : request) {
    std::vector<Sample> pool;
    for (const auto& s : manifest.samples) {
      if (s.source_tag == source) pool.push_back(s);
    }
    const std::size_t needed = want.train + want.test;
    if (pool.size() < needed) {
      throw DataError("source '" + source + "' has " + std::to_string(pool.size()) + " samples but " +
                      std::to_string(needed) + " were requested (short by " +
                      std::to_string(needed - pool.size()) + ")");
    }
    rng.shuffle(std::span<Sample>(pool));
    for (std::size_t i = 0; i < needed; ++i) {
      pool[i].split = i < want.train ? Split::train : Split::test;
      out.samples.push_back(pool[i]);
    }
    out.params["counts"][source] = {{"train", want.train}, {"test", want.test}};
  }
  out.validate();
  return out;
}

}  // namespace crackseg
