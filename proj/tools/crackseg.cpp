// crackseg command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "crackseg/checkpoint.hpp"
#include "crackseg/config_io.hpp"
#include "crackseg/datapipe.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/experiment.hpp"
#include "crackseg/image.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/synthgen.hpp"
#include "crackseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace crackseg;

namespace {

// Thrown for flag combinations CLI11 cannot validate on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

DatasetManifest load_manifests(const std::vector<std::string>& paths) {
  std::vector<DatasetManifest> parts;
  for (const auto& p : paths) parts.push_back(read_manifest(p));
  if (parts.size() == 1) return parts.front();
  return merge_manifests(parts, "merged");
}

std::vector<Sample> select_split(const DatasetManifest& manifest, const std::string& split) {
  if (split == "all") return manifest.samples;
  return manifest.select(parse_split(split));
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string style;
  int count = 0;
  int size = 256;
  std::uint64_t seed = 0;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  const auto manifest = generate_corpus(SynthStyle::by_name(a.style), a.count, a.size, a.seed, a.out);
  std::cout << "wrote " << manifest.samples.size() << " image/mask pairs and "
            << (fs::path(a.out) / "manifest.jsonl").string() << '\n';
}

// --- tile -------------------------------------------------------------------

struct TileArgs {
  std::string input;
  int tile_size = 256;
  std::string out;
};

void run_tile(const TileArgs& a) {
  const Raster image = read_image(a.input);
  const auto tiles = tile_image(image, {a.tile_size});
  fs::create_directories(a.out);
  for (const auto& t : tiles) write_png(fs::path(a.out) / tile_name(t.x, t.y), t.raster);
  const int covered_w = image.width / a.tile_size * a.tile_size;
  const int covered_h = image.height / a.tile_size * a.tile_size;
  std::cout << "wrote " << tiles.size() << " tiles of " << a.tile_size << "x" << a.tile_size << " to " << a.out
            << '\n';
  if (covered_w < image.width || covered_h < image.height) {
    std::cout << "dropped remainder: " << image.width - covered_w << " columns at the right, "
              << image.height - covered_h << " rows at the bottom\n";
  }
}

// --- split ------------------------------------------------------------------

struct SplitArgs {
  std::vector<std::string> manifests;
  std::vector<std::string> requests;  // SOURCE:TRAIN:TEST
  std::uint64_t seed = 0;
  std::string out;
};

void run_split(const SplitArgs& a) {
  std::map<std::string, SplitCounts> request;
  for (const auto& r : a.requests) {
    const auto first = r.find(':');
    const auto second = r.rfind(':');
    if (first == std::string::npos || first == second) {
      throw UsageError("--source expects SOURCE:TRAIN:TEST, got '" + r + "'");
    }
    try {
      request[r.substr(0, first)] = {std::stoul(r.substr(first + 1, second - first - 1)),
                                     std::stoul(r.substr(second + 1))};
    } catch (const std::logic_error&) {
      throw UsageError("--source expects SOURCE:TRAIN:TEST with integer counts, got '" + r + "'");
    }
  }
  auto split = make_splits(load_manifests(a.manifests), request, a.seed);
  write_manifest(a.out, split);
  for (const auto& [key, n] : split.counts()) {
    std::cout << key.first << " " << split_name(key.second) << ": " << n << '\n';
  }
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> manifests;
  std::string config;
  std::string out;
  std::string history;
  std::string resume;
  std::string split = "train";
  std::int64_t stop_after = 0;
};

void run_train(const TrainArgs& a) {
  if (a.config.empty() && a.resume.empty()) throw UsageError("train needs --config or --resume");
  const auto manifest = load_manifests(a.manifests);
  const auto samples = select_split(manifest, a.split);
  const auto loaded = load_training_set(samples);  // fails before training if a mask is missing

  TrainState state = [&] {
    if (!a.resume.empty()) {
      auto s = load_checkpoint(a.resume);
      if (!a.config.empty()) {
        const auto run = read_run_config(a.config);
        if (!(run.model == s.model.config()) || !(run.train == s.config)) {
          throw ConfigError("--config does not match the configuration stored in " + a.resume);
        }
      }
      return s;
    }
    const auto run = read_run_config(a.config);
    return init_training(run.model, run.train);
  }();

  std::cout << "training on " << loaded.size() << " samples from episode " << state.episode << " to "
            << state.config.episodes << " (" << episode_unit_name(state.config.episode_unit) << ")\n";
  TrainHooks hooks;
  if (a.stop_after > 0) hooks.max_episodes = a.stop_after;
  hooks.on_episode_end = [](const TrainState&, const EpisodeRecord& r) {
    std::cout << "episode " << r.episode << " loss " << r.mean_loss << '\n';
  };
  auto history = train(state, loaded, hooks);
  history.metadata["manifests"] = a.manifests;
  save_checkpoint(state, a.out);
  const std::string history_path = a.history.empty() ? a.out + ".history.jsonl" : a.history;
  history.write_jsonl(history_path);
  std::cout << "saved " << a.out << " at episode " << state.episode << "; history in " << history_path << '\n';
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> manifests;
  double threshold = 0.5;
  std::string aggregation = "micro";
  std::string split = "test";
  std::string json;
};

void run_eval(const EvalArgs& a) {
  const auto state = load_checkpoint(a.checkpoint);
  const auto samples = select_split(load_manifests(a.manifests), a.split);
  if (samples.empty()) throw DataError("no samples in split '" + a.split + "'");
  std::vector<Aggregation> modes;
  if (a.aggregation == "both") {
    modes = {Aggregation::micro, Aggregation::per_image_mean};
  } else {
    modes = {parse_aggregation(a.aggregation)};
  }
  nlohmann::json reports = nlohmann::json::array();
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const auto report = evaluate_dataset(state.model, std::span<const Sample>(samples), a.threshold, modes[i]);
    if (i > 0) std::cout << '\n';
    std::cout << report.to_text();
    reports.push_back(report.to_json());
  }
  if (!a.json.empty()) {
    std::ofstream out(a.json);
    if (!out) throw IoError("cannot write " + a.json);
    out << (reports.size() == 1 ? reports[0] : reports).dump(2) << '\n';
  }
}

// --- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  bool overlay = false;
  int tile_size = 0;  // 0: the model's input size
  double threshold = 0.5;
  double alpha = 0.5;
  std::vector<int> color{255, 0, 0};
};

Raster to_channels(const Raster& image, int channels) {
  if (image.channels == channels) return image;
  Raster out(image.width, image.height, channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (channels == 3) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x, y);
      } else {
        const double gray = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
        out.at(x, y) = static_cast<std::uint8_t>(std::lround(gray));
      }
    }
  }
  return out;
}

void run_predict(const PredictArgs& a) {
  const auto state = load_checkpoint(a.checkpoint);
  const UNet& model = state.model;
  const int tile = a.tile_size > 0 ? a.tile_size : model.config().input_size;
  const Raster original = read_image(a.input);
  const Raster image = to_channels(original, model.config().in_channels);
  if (image.width < tile || image.height < tile) {
    throw DataError("input " + a.input + " is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    ", smaller than the " + std::to_string(tile) + "x" + std::to_string(tile) + " tile");
  }

  std::vector<Tile> predicted;
  {
    NoGradGuard no_grad;
    for (const auto& t : tile_image(image, {tile})) {
      const Tensor prob = model.forward(image_to_tensor(t.raster));
      Raster mask(t.raster.width, t.raster.height, 1);
      for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
        mask.pixels[i] = static_cast<double>(prob.data()[i]) > a.threshold ? 255 : 0;
      }
      predicted.push_back({std::move(mask), t.x, t.y});
    }
  }
  const Raster mask = stitch_predictions(predicted, image.width, image.height);

  fs::create_directories(a.out);
  const std::string stem = fs::path(a.input).stem().string();
  const fs::path mask_path = fs::path(a.out) / (stem + "_mask.png");
  write_png(mask_path, mask);
  std::cout << "wrote " << mask_path.string() << '\n';

  if (a.overlay) {
    Raster composite = to_channels(original, 3);
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        if (!mask.at(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          const double v = (1.0 - a.alpha) * composite.at(x, y, c) + a.alpha * a.color[static_cast<std::size_t>(c)];
          composite.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
    const fs::path overlay_path = fs::path(a.out) / (stem + "_overlay.png");
    write_png(overlay_path, composite);
    std::cout << "wrote " << overlay_path.string() << '\n';
  }

  const int covered_w = image.width / tile * tile;
  const int covered_h = image.height / tile * tile;
  const fs::path note_path = fs::path(a.out) / (stem + "_coverage.txt");
  std::ofstream note(note_path);
  note << "input: " << a.input << '\n'
       << "size: " << image.width << "x" << image.height << '\n'
       << "tile_size: " << tile << '\n'
       << "tiles: " << predicted.size() << '\n'
       << "covered: x 0-" << covered_w - 1 << ", y 0-" << covered_h - 1 << '\n'
       << "uncovered_columns: " << image.width - covered_w << '\n'
       << "uncovered_rows: " << image.height - covered_h << '\n';
  if (covered_w < image.width || covered_h < image.height) {
    note << "note: pixels outside the covered region were not predicted and are 0 in the mask\n";
    std::cout << "warning: " << image.width - covered_w << " columns and " << image.height - covered_h
              << " rows at the right/bottom edge were not predicted (see " << note_path.string() << ")\n";
  }
}

// --- experiment -------------------------------------------------------------

struct ExperimentArgs {
  std::string spec;
  std::string json;
  bool quiet = false;
};

void run_experiment_command(const ExperimentArgs& a) {
  const auto spec = read_experiment_spec(a.spec);
  ExperimentProgress progress;
  if (!a.quiet) {
    progress = [](const std::string& variant, std::uint64_t seed, const EpisodeRecord& r) {
      std::cout << variant << " seed " << seed << " episode " << r.episode << " loss " << r.mean_loss << '\n';
    };
  }
  const auto table = run_experiment(spec, progress);
  std::cout << table.to_text();
  if (!a.json.empty()) {
    std::ofstream out(a.json);
    if (!out) throw IoError("cannot write " + a.json);
    out << table.to_json().dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-level pavement crack segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic crack corpus with exact masks");
  synth_cmd->add_option("--style", synth.style, "Visual style")->required()->check(CLI::IsMember({"A", "B"}));
  synth_cmd->add_option("--count", synth.count, "Number of image/mask pairs")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth.size, "Image side in pixels")->capture_default_str()->check(CLI::Range(64, 8192));
  synth_cmd->add_option("--seed", synth.seed, "Corpus seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TileArgs tile;
  auto* tile_cmd = app.add_subcommand("tile", "Cut an image into square tiles named by grid origin");
  tile_cmd->add_option("--input", tile.input, "Image to tile")->required();
  tile_cmd->add_option("--tile-size", tile.tile_size, "Tile side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  tile_cmd->add_option("--out", tile.out, "Output directory")->required();

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Assign per-source train/test splits");
  split_cmd->add_option("--manifest", split.manifests, "Input manifest (repeatable)")->required();
  split_cmd->add_option("--source", split.requests, "SOURCE:TRAIN:TEST counts (repeatable)")->required();
  split_cmd->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();
  split_cmd->add_option("--out", split.out, "Output manifest")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a U-Net on the train split of one or more manifests");
  train_cmd->add_option("--manifest", tr.manifests, "Manifest (repeatable; samples are merged)")->required();
  train_cmd->add_option("--config", tr.config, "JSON run config with \"model\" and \"train\" sections");
  train_cmd->add_option("--out", tr.out, "Checkpoint to write")->required();
  train_cmd->add_option("--history", tr.history, "History JSONL (default: <out>.history.jsonl)");
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
  train_cmd->add_option("--split", tr.split, "Samples to train on")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
  train_cmd->add_option("--stop-after", tr.stop_after, "Stop after this many episodes (resumable)")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", ev.manifests, "Manifest (repeatable)")->required();
  eval_cmd->add_option("--threshold", ev.threshold, "Probability threshold")->capture_default_str()->check(CLI::Bound(1e-9, 1 - 1e-9));
  eval_cmd->add_option("--aggregation", ev.aggregation, "micro, per_image_mean or both")->capture_default_str()->check(CLI::IsMember({"micro", "per_image_mean", "both"}));
  eval_cmd->add_option("--split", ev.split, "Samples to evaluate")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--json", ev.json, "Also write the report as JSON");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict a crack mask for an image of any size");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint")->required();
  predict_cmd->add_option("--input", pr.input, "Image")->required();
  predict_cmd->add_option("--out", pr.out, "Output directory")->required();
  predict_cmd->add_flag("--overlay", pr.overlay, "Also write the mask blended onto the image");
  predict_cmd->add_option("--tile-size", pr.tile_size, "Tile side (default: the model's input size)")->check(CLI::PositiveNumber);
  predict_cmd->add_option("--threshold", pr.threshold, "Probability threshold")->capture_default_str()->check(CLI::Bound(1e-9, 1 - 1e-9));
  predict_cmd->add_option("--alpha", pr.alpha, "Overlay opacity")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  predict_cmd->add_option("--color", pr.color, "Overlay color R G B")->expected(3)->capture_default_str()->check(CLI::Range(0, 255));

  ExperimentArgs ex;
  auto* experiment_cmd = app.add_subcommand("experiment", "Train variants and tabulate IoU/F1 per evaluation set");
  experiment_cmd->add_option("--spec", ex.spec, "JSON experiment description")->required();
  experiment_cmd->add_option("--json", ex.json, "Also write the table as JSON");
  experiment_cmd->add_flag("--quiet", ex.quiet, "Do not print per-episode progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) run_synth(synth);
    if (*tile_cmd) run_tile(tile);
    if (*split_cmd) run_split(split);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) run_eval(ev);
    if (*predict_cmd) run_predict(pr);
    if (*experiment_cmd) run_experiment_command(ex);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
