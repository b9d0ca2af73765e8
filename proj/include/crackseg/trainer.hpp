#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crackseg/adam.hpp"
#include "crackseg/datapipe.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/unet.hpp"
#include "json.hpp"

namespace crackseg {

/// What one training "episode" means: a full pass over the data, or a single
/// optimizer step.
enum class EpisodeUnit { epochs, steps };

std::string_view episode_unit_name(EpisodeUnit unit);
EpisodeUnit parse_episode_unit(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 5;
  int episodes = 1000;
  EpisodeUnit episode_unit = EpisodeUnit::epochs;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables periodic evaluation and checkpoints
  std::string checkpoint_dir;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool augment = true;
  double threshold = 0.5;

  void validate() const;
  AdamOptions adam() const { return {learning_rate, beta1, beta2, adam_epsilon}; }
  bool operator==(const TrainConfig&) const = default;
};

/// Everything needed to continue a run bit-exactly. Shuffles and
/// augmentation draws are pure functions of (config.seed, episode), so the
/// completed-episode counter is the whole random state.
struct TrainState {
  UNet model;
  AdamState<float> adam;
  TrainConfig config;
  std::int64_t episode = 0;  // completed episodes
};

/// Fresh model (initialised from config.seed) and zeroed optimizer state.
TrainState init_training(const UNetConfig& model_config, const TrainConfig& config);

struct EpisodeRecord {
  std::int64_t episode = 0;  // 1-based index of the finished episode
  double mean_loss = 0;      // sample-weighted over the episode's batches
  std::size_t steps = 0;
  std::optional<MetricsReport> eval;
};

struct TrainHistory {
  nlohmann::json metadata;
  std::vector<EpisodeRecord> episodes;

  /// One JSON record per line: metadata first, then one per episode.
  void write_jsonl(const std::filesystem::path& path) const;
};

struct TrainHooks {
  /// Evaluated every config.eval_every episodes when non-empty.
  std::span<const LoadedSample> eval_samples;
  /// Stop after this many episodes in this call (the run can be resumed).
  std::optional<std::int64_t> max_episodes;
  std::function<void(const TrainState&, const EpisodeRecord&)> on_episode_end;
};

/// Dataset order for an epoch: a seeded permutation of [0, count).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t count);

/// Seed of the augmentation draw for the sample at `position` in `epoch`.
std::uint64_t augmentation_seed(std::uint64_t seed, std::int64_t epoch, std::size_t position);

/// Trains from state.episode up to config.episodes. Each step: assemble the
/// batch in shuffled order (last partial batch kept), augment per sample,
/// forward, BCE, backward, Adam. Throws NumericError naming the episode and
/// batch if the loss goes non-finite.
TrainHistory train(TrainState& state, std::span<const LoadedSample> samples, const TrainHooks& hooks = {});

/// Loads every sample; throws before any training if one lacks a mask.
std::vector<LoadedSample> load_training_set(std::span<const Sample> samples);

}  // namespace crackseg
