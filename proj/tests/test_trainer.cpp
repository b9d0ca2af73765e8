#include <doctest.h>

#include <fstream>
#include <limits>
#include <numeric>

#include "crackseg/checkpoint.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/trainer.hpp"
#include "fixtures.hpp"
#include "scratch.hpp"

using namespace crackseg;
using namespace crackseg::testing;

namespace {

TrainConfig config(int episodes, double lr = 1e-3, std::uint64_t seed = 5) {
  TrainConfig c;
  c.learning_rate = lr;
  c.batch_size = 5;
  c.episodes = episodes;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto samples = stripe_samples(6, 16, 3);
  auto state = init_training(tiny_unet(), config(3, 0.0));
  const auto before = flat_parameters(state.model);
  const auto history = train(state, samples);
  CHECK(history.episodes.size() == 3);
  CHECK(flat_parameters(state.model) == before);
  CHECK(state.adam.step == 6);
}

TEST_CASE("one optimizer step changes the parameters") {
  const auto samples = stripe_samples(5, 16, 4);
  auto state = init_training(tiny_unet(), config(1, 1e-4));
  const auto before = flat_parameters(state.model);
  train(state, samples);
  const auto after = flat_parameters(state.model);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != after[i];
  CHECK(changed > 0);
}

TEST_CASE("training is deterministic in the seed") {
  const auto samples = stripe_samples(7, 16, 5);
  auto run = [&](std::uint64_t seed) {
    auto state = init_training(tiny_unet(), config(3, 1e-3, seed));
    const auto history = train(state, samples);
    std::vector<double> losses;
    for (const auto& e : history.episodes) losses.push_back(e.mean_loss);
    return std::make_pair(flat_parameters(state.model), losses);
  };
  const auto a = run(9), b = run(9), c = run(10);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("shuffle order is a seeded permutation") {
  const auto order = epoch_order(3, 7, 50);
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expected(50);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  CHECK(sorted == expected);
  CHECK(epoch_order(3, 7, 50) == order);
  CHECK(epoch_order(3, 8, 50) != order);
  CHECK(epoch_order(4, 7, 50) != order);
  CHECK(augmentation_seed(3, 7, 1) != augmentation_seed(3, 7, 2));
}

TEST_CASE("smoothed training loss does not increase") {
  const auto samples = stripe_samples(4, 16, 6);
  auto state = init_training(tiny_unet(16, 4), config(100, 1e-3, 2));
  const auto history = train(state, samples);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 5; ++w) {
    double total = 0;
    for (std::size_t e = 0; e < 20; ++e) total += history.episodes[w * 20 + e].mean_loss;
    windows.push_back(total / 20);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] <= windows[w - 1]);
  CHECK(windows.back() < 0.5 * windows.front());
}

TEST_CASE("steps mode runs one batch per episode in epoch order") {
  const auto samples = stripe_samples(8, 16, 7);
  auto by_epoch = init_training(tiny_unet(), config(1));
  const auto epoch_history = train(by_epoch, samples);
  CHECK(epoch_history.episodes[0].steps == 2);  // 5 + 3, the partial batch is kept

  auto steps_config = config(2);
  steps_config.episode_unit = EpisodeUnit::steps;
  auto by_step = init_training(tiny_unet(), steps_config);
  const auto step_history = train(by_step, samples);
  REQUIRE(step_history.episodes.size() == 2);
  CHECK(step_history.episodes[0].steps == 1);
  CHECK(step_history.metadata.at("episode_unit") == "steps");
  CHECK(flat_parameters(by_step.model) == flat_parameters(by_epoch.model));
}

TEST_CASE("training preconditions") {
  auto state = init_training(tiny_unet(), config(1));
  CHECK_THROWS_WITH_AS(train(state, {}), doctest::Contains("empty"), DataError);

  auto samples = stripe_samples(3, 16, 8);
  samples[1].mask = Tensor{};
  CHECK_THROWS_WITH_AS(train(state, samples), doctest::Contains("no mask"), DataError);

  std::vector<LoadedSample> rgb{{Tensor::zeros({1, 3, 16, 16}), Tensor::zeros({1, 1, 16, 16})}};
  CHECK_THROWS_AS(train(state, rgb), DataError);

  std::vector<Sample> unmasked{{"a.png", std::nullopt, "A", Split::train}};
  CHECK_THROWS_AS(load_training_set(unmasked), DataError);

  auto bad = config(1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = config(0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = config(1, -1.0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(state.episode == 0);
}

TEST_CASE("non-finite loss aborts naming the episode and batch") {
  auto samples = stripe_samples(6, 16, 9);
  samples[0].image.data()[5] = std::numeric_limits<float>::quiet_NaN();
  auto c = config(2);
  c.augment = false;
  auto state = init_training(tiny_unet(), c);
  CHECK_THROWS_WITH_AS(train(state, samples), doctest::Contains("episode 1, batch"), NumericError);
}

TEST_CASE("history, periodic evaluation and checkpoints") {
  const auto dir = scratch_dir("trainer_outputs");
  const auto samples = stripe_samples(5, 16, 10);
  auto c = config(4);
  c.eval_every = 2;
  c.checkpoint_dir = (dir / "ckpt").string();
  auto state = init_training(tiny_unet(), c);
  std::vector<std::int64_t> seen;
  TrainHooks hooks;
  hooks.eval_samples = samples;
  hooks.on_episode_end = [&](const TrainState& s, const EpisodeRecord& r) {
    CHECK(s.episode == r.episode);
    seen.push_back(r.episode);
  };
  const auto history = train(state, samples, hooks);
  CHECK(seen == std::vector<std::int64_t>{1, 2, 3, 4});
  CHECK_FALSE(history.episodes[0].eval);
  REQUIRE(history.episodes[1].eval);
  CHECK(history.episodes[1].eval->images == 5);
  CHECK(std::filesystem::exists(dir / "ckpt" / "episode_2.ckpt"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "episode_4.ckpt"));
  CHECK(load_checkpoint(dir / "ckpt" / "latest.ckpt").episode == 4);
  CHECK(load_checkpoint(dir / "ckpt" / "episode_2.ckpt").episode == 2);

  history.write_jsonl(dir / "history.jsonl");
  std::ifstream in(dir / "history.jsonl");
  std::string line;
  std::vector<nlohmann::json> records;
  while (std::getline(in, line)) records.push_back(nlohmann::json::parse(line));
  REQUIRE(records.size() == 5);
  CHECK(records[0].at("metadata").at("episode_unit") == "epochs");
  CHECK(records[2].at("episode") == 2);
  CHECK(records[2].contains("eval"));
  CHECK_FALSE(records[1].contains("eval"));
}
