#include "crackseg/config_io.hpp"

#include <fstream>
#include <set>

namespace crackseg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(std::string("unknown ") + what + " config key '" + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const UNetConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"widen_factor", c.widen_factor},
          {"in_channels", c.in_channels},
          {"input_size", c.input_size}};
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"episodes", c.episodes},
          {"episode_unit", episode_unit_name(c.episode_unit)},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"checkpoint_dir", c.checkpoint_dir},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"augment", c.augment},
          {"threshold", c.threshold}};
}

UNetConfig unet_config_from_json(const json& j) {
  reject_unknown(j, {"depth", "base_channels", "widen_factor", "in_channels", "input_size"}, "model");
  UNetConfig c;
  read(j, "depth", c.depth);
  read(j, "base_channels", c.base_channels);
  read(j, "widen_factor", c.widen_factor);
  read(j, "in_channels", c.in_channels);
  read(j, "input_size", c.input_size);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"learning_rate", "batch_size", "episodes", "episode_unit", "seed", "eval_every",
                  "checkpoint_dir", "beta1", "beta2", "adam_epsilon", "augment", "threshold"},
                 "train");
  TrainConfig c;
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "episodes", c.episodes);
  std::string unit(episode_unit_name(c.episode_unit));
  read(j, "episode_unit", unit);
  c.episode_unit = parse_episode_unit(unit);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "checkpoint_dir", c.checkpoint_dir);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "adam_epsilon", c.adam_epsilon);
  read(j, "augment", c.augment);
  read(j, "threshold", c.threshold);
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  reject_unknown(j, {"model", "train"}, "top-level");
  RunConfig rc;
  if (j.contains("model")) rc.model = unet_config_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  return rc;
}

}  // namespace crackseg
