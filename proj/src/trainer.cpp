#include "crackseg/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "crackseg/checkpoint.hpp"
#include "crackseg/config_io.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

namespace {
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kAugmentStream = 0x4155474dULL;
}  // namespace

std::string_view episode_unit_name(EpisodeUnit unit) {
  return unit == EpisodeUnit::epochs ? "epochs" : "steps";
}

EpisodeUnit parse_episode_unit(std::string_view text) {
  if (text == "epochs") return EpisodeUnit::epochs;
  if (text == "steps") return EpisodeUnit::steps;
  throw ConfigError("episode_unit must be 'epochs' or 'steps', got '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (episodes < 1) throw ConfigError("episodes must be >= 1");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
}

TrainState init_training(const UNetConfig& model_config, const TrainConfig& config) {
  config.validate();
  UNet model = UNet::build(model_config, config.seed);
  const auto params = model.parameters();
  auto adam = AdamState<float>::for_parameters(params);
  return TrainState{std::move(model), std::move(adam), config, 0};
}

void TrainHistory::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out << nlohmann::json{{"metadata", metadata}}.dump() << '\n';
  for (const auto& e : episodes) {
    nlohmann::json rec = {{"episode", e.episode}, {"loss", e.mean_loss}, {"steps", e.steps}};
    if (e.eval) rec["eval"] = e.eval->to_json();
    out << rec.dump() << '\n';
  }
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

std::uint64_t augmentation_seed(std::uint64_t seed, std::int64_t epoch, std::size_t position) {
  return derive_seed(seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch), position);
}

std::vector<LoadedSample> load_training_set(std::span<const Sample> samples) {
  for (const auto& s : samples) {
    if (!s.mask_path) throw DataError("training sample " + s.image_path.string() + " has no mask");
  }
  std::vector<LoadedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(load_sample(s));
  return out;
}

namespace {

struct Batch {
  Tensor images;
  Tensor masks;
};

Batch assemble(std::span<const LoadedSample> samples, std::span<const std::size_t> order,
               std::size_t begin, std::size_t end, const TrainConfig& config, std::int64_t epoch) {
  std::vector<float> images, masks;
  Shape image_shape, mask_shape;
  for (std::size_t pos = begin; pos < end; ++pos) {
    const LoadedSample& s = samples[order[pos]];
    Tensor image = s.image, mask = s.mask;
    if (config.augment) {
      auto aug = augment(image, mask, augmentation_seed(config.seed, epoch, pos));
      image = aug.image;
      mask = aug.mask;
    }
    if (pos == begin) {
      image_shape = image.shape();
      mask_shape = mask.shape();
    } else if (image.shape() != image_shape || mask.shape() != mask_shape) {
      throw DataError("training samples differ in size: " + shape_string(image.shape()) + " vs " +
                      shape_string(image_shape));
    }
    images.insert(images.end(), image.data().begin(), image.data().end());
    masks.insert(masks.end(), mask.data().begin(), mask.data().end());
  }
  const std::size_t n = end - begin;
  image_shape[0] = n;
  mask_shape[0] = n;
  return {Tensor(image_shape, std::move(images)), Tensor(mask_shape, std::move(masks))};
}

}  // namespace

TrainHistory train(TrainState& state, std::span<const LoadedSample> samples, const TrainHooks& hooks) {
  const TrainConfig& config = state.config;
  config.validate();
  if (samples.empty()) throw DataError("training split is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].mask.defined()) throw DataError("training sample " + std::to_string(i) + " has no mask");
    if (samples[i].image.dim(1) != static_cast<std::size_t>(state.model.config().in_channels)) {
      throw DataError("training sample " + std::to_string(i) + " has " +
                      std::to_string(samples[i].image.dim(1)) + " channels, model expects " +
                      std::to_string(state.model.config().in_channels));
    }
  }

  TrainHistory history;
  history.metadata = {{"episode_unit", episode_unit_name(config.episode_unit)},
                      {"train_samples", samples.size()},
                      {"model", to_json(state.model.config())},
                      {"train", to_json(config)},
                      {"start_episode", state.episode}};
  if (config.episode_unit == EpisodeUnit::steps) {
    history.metadata["episode_unit_note"] = "one episode = one optimizer step";
  } else {
    history.metadata["episode_unit_note"] = "one episode = one full pass over the training set";
  }

  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches_per_epoch = (samples.size() + batch - 1) / batch;
  const AdamOptions adam = config.adam();
  auto params = state.model.parameters();

  auto run_step = [&](std::int64_t epoch, std::size_t batch_index, const std::vector<std::size_t>& order,
                      std::int64_t episode_number) {
    const std::size_t begin = batch_index * batch;
    const std::size_t end = std::min(samples.size(), begin + batch);
    const Batch b = assemble(samples, order, begin, end, config, epoch);
    double loss_value = 0;
    try {
      state.model.zero_grad();
      const Tensor loss = bce_loss(state.model.forward(b.images), b.masks);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) throw NumericError("loss is " + std::to_string(loss_value));
      loss.backward();
      adam_step(std::span<Tensor>(params), state.adam, adam);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at episode " + std::to_string(episode_number) + ", batch " +
                         std::to_string(batch_index) + ": " + e.what());
    }
    state.model.zero_grad();
    return std::make_pair(loss_value, end - begin);
  };

  std::int64_t done_this_call = 0;
  while (state.episode < config.episodes) {
    if (hooks.max_episodes && done_this_call >= *hooks.max_episodes) break;
    const std::int64_t episode_number = state.episode + 1;
    EpisodeRecord record;
    record.episode = episode_number;
    double weighted = 0;
    std::size_t seen = 0;
    if (config.episode_unit == EpisodeUnit::epochs) {
      const auto order = epoch_order(config.seed, state.episode, samples.size());
      for (std::size_t bi = 0; bi < batches_per_epoch; ++bi) {
        const auto [loss, n] = run_step(state.episode, bi, order, episode_number);
        weighted += loss * static_cast<double>(n);
        seen += n;
        ++record.steps;
      }
    } else {
      const auto epoch = static_cast<std::int64_t>(static_cast<std::size_t>(state.episode) / batches_per_epoch);
      const std::size_t bi = static_cast<std::size_t>(state.episode) % batches_per_epoch;
      const auto order = epoch_order(config.seed, epoch, samples.size());
      const auto [loss, n] = run_step(epoch, bi, order, episode_number);
      weighted = loss * static_cast<double>(n);
      seen = n;
      record.steps = 1;
    }
    record.mean_loss = weighted / static_cast<double>(seen);
    state.episode = episode_number;
    ++done_this_call;

    const bool periodic = config.eval_every > 0 && episode_number % config.eval_every == 0;
    if (periodic && !hooks.eval_samples.empty()) {
      record.eval = evaluate_dataset(state.model, hooks.eval_samples, config.threshold);
    }
    if (periodic && !config.checkpoint_dir.empty()) {
      std::filesystem::create_directories(config.checkpoint_dir);
      save_checkpoint(state, std::filesystem::path(config.checkpoint_dir) /
                                 ("episode_" + std::to_string(episode_number) + ".ckpt"));
    }
    if (hooks.on_episode_end) hooks.on_episode_end(state, record);
    history.episodes.push_back(std::move(record));
  }
  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    save_checkpoint(state, std::filesystem::path(config.checkpoint_dir) / "latest.ckpt");
  }
  return history;
}

}  // namespace crackseg
