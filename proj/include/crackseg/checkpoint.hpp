#pragma once

#include <cstdint>
#include <filesystem>

#include "crackseg/trainer.hpp"

namespace crackseg {

/// Binary checkpoint layout (all integers little-endian):
///
///   8 bytes   magic "CRACKSEG"
///   u32       format version
///   u64       metadata length L
///   L bytes   metadata, JSON text: model and train configs, episode, Adam
///             step, and the name/shape of every tensor in payload order
///   payload   float32 values: every parameter, then every first moment,
///             then every second moment
///   u64       FNV-1a 64 checksum of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kOldestReadableCheckpointVersion = 1;

/// Written to a temporary file and renamed into place.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Throws CheckpointVersionError, CheckpointTruncatedError or
/// CheckpointChecksumError; never returns a partially read state.
TrainState load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace crackseg
