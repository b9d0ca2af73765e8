#include "crackseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "crackseg/config_io.hpp"

namespace crackseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'C', 'K', 'S', 'E', 'G'};
constexpr std::size_t kHeaderBytes = 8 + 4 + 8;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float v : values) put_le(out, std::bit_cast<std::uint32_t>(v));
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) h = (h ^ b) * 0x100000001b3ULL;
  return h;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  const auto named = state.model.named_parameters();
  json tensors = json::array();
  for (const auto& p : named) tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const json meta = {{"model", to_json(state.model.config())},
                     {"train", to_json(state.config)},
                     {"episode", state.episode},
                     {"adam_step", state.adam.step},
                     {"dtype", "float32"},
                     {"tensors", tensors}};
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> bytes(std::begin(kMagic), std::end(kMagic));
  put_le(bytes, kCheckpointVersion);
  put_le(bytes, static_cast<std::uint64_t>(meta_text.size()));
  bytes.insert(bytes.end(), meta_text.begin(), meta_text.end());
  for (const auto& p : named) put_floats(bytes, p.tensor.data());
  for (const auto& m : state.adam.m) put_floats(bytes, m);
  for (const auto& v : state.adam.v) put_floats(bytes, v);
  put_le(bytes, fnv1a64(bytes));

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();

  if (bytes.size() < kHeaderBytes) {
    throw CheckpointTruncatedError(where + " is truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError(where + " has no CRACKSEG magic");
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version < kOldestReadableCheckpointVersion || version > kCheckpointVersion) {
    throw CheckpointVersionError(where + " has format version " + std::to_string(version) +
                                 "; this build reads versions " +
                                 std::to_string(kOldestReadableCheckpointVersion) + " to " +
                                 std::to_string(kCheckpointVersion));
  }
  const auto meta_len = get_le<std::uint64_t>(bytes.data() + 12);
  if (meta_len > bytes.size() - kHeaderBytes) {
    throw CheckpointTruncatedError(where + " is truncated inside its metadata block");
  }
  json meta;
  try {
    meta = json::parse(bytes.begin() + kHeaderBytes,
                       bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + meta_len));
  } catch (const json::parse_error& e) {
    throw CheckpointChecksumError(where + " has corrupt metadata: " + e.what());
  }

  UNetConfig model_config;
  TrainConfig train_config;
  std::vector<std::pair<std::string, Shape>> layout;
  std::int64_t episode = 0, adam_step = 0;
  try {
    model_config = unet_config_from_json(meta.at("model"));
    train_config = train_config_from_json(meta.at("train"));
    episode = meta.at("episode").get<std::int64_t>();
    adam_step = meta.at("adam_step").get<std::int64_t>();
    for (const auto& t : meta.at("tensors")) {
      layout.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw CheckpointChecksumError(where + " has malformed metadata: " + e.what());
  }

  std::size_t scalars = 0;
  for (const auto& [name, shape] : layout) scalars += shape_numel(shape);
  const std::size_t expected = kHeaderBytes + meta_len + 3 * scalars * sizeof(float) + 8;
  if (bytes.size() < expected) {
    throw CheckpointTruncatedError(where + " is truncated: " + std::to_string(bytes.size()) +
                                   " bytes, expected " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw CheckpointChecksumError(where + " has " + std::to_string(bytes.size() - expected) +
                                  " unexpected trailing bytes");
  }
  const std::size_t body = expected - 8;
  if (fnv1a64(std::span(bytes.data(), body)) != get_le<std::uint64_t>(bytes.data() + body)) {
    throw CheckpointChecksumError(where + " failed its checksum");
  }

  const std::uint8_t* cursor = bytes.data() + kHeaderBytes + meta_len;
  auto read_floats = [&](std::size_t n) {
    std::vector<float> values(n);
    for (auto& v : values) {
      v = std::bit_cast<float>(get_le<std::uint32_t>(cursor));
      cursor += 4;
    }
    return values;
  };
  std::vector<NamedParameter<float>> params;
  for (const auto& [name, shape] : layout) {
    params.push_back({name, Tensor(shape, read_floats(shape_numel(shape)), true)});
  }
  AdamState<float> adam;
  adam.step = adam_step;
  for (const auto& [name, shape] : layout) adam.m.push_back(read_floats(shape_numel(shape)));
  for (const auto& [name, shape] : layout) adam.v.push_back(read_floats(shape_numel(shape)));

  UNet model(model_config, std::move(params));
  return TrainState{std::move(model), std::move(adam), train_config, episode};
}

}  // namespace crackseg
