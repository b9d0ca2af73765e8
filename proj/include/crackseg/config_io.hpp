#pragma once

#include <filesystem>

#include "crackseg/trainer.hpp"
#include "crackseg/unet.hpp"
#include "json.hpp"

namespace crackseg {

nlohmann::json to_json(const UNetConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
UNetConfig unet_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct RunConfig {
  UNetConfig model;
  TrainConfig train;
};

/// JSON file with optional "model" and "train" objects, e.g.
///   {"model": {"depth": 3, "base_channels": 8, "in_channels": 1, "input_size": 64},
///    "train": {"episodes": 50, "seed": 7}}
RunConfig read_run_config(const std::filesystem::path& path);

}  // namespace crackseg
