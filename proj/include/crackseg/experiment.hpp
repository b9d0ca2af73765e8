#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "crackseg/datapipe.hpp"
#include "crackseg/trainer.hpp"
#include "crackseg/unet.hpp"
#include "json.hpp"

namespace crackseg {

/// A model variant trained on the union of named datasets.
struct ExperimentVariant {
  std::string name;
  std::vector<std::string> train_on;
};

/// Train each variant once per seed, evaluate every variant on every named
/// evaluation set (micro IoU/F1).
struct ExperimentSpec {
  std::map<std::string, std::vector<Sample>> datasets;
  std::vector<ExperimentVariant> variants;
  std::vector<std::string> evaluate_on;
  std::vector<std::uint64_t> seeds{0};
  UNetConfig model;
  TrainConfig train;  // seed is replaced by each entry of `seeds`
};

struct ExperimentRow {
  std::string variant;
  std::string trained_on;  // dataset names joined with '+'
  std::string evaluated_on;
  std::vector<double> iou;  // one per seed, in seed order
  std::vector<double> f1;

  double iou_mean() const;
  double iou_min() const;
  double iou_max() const;
  double f1_mean() const;
};

struct ExperimentTable {
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentRow> rows;

  const ExperimentRow& row(const std::string& variant, const std::string& evaluated_on) const;
  /// Fixed-width table; with several seeds, mean and [min, max].
  std::string to_text() const;
  nlohmann::json to_json() const;
};

using ExperimentProgress = std::function<void(const std::string& variant, std::uint64_t seed,
                                              const EpisodeRecord& record)>;

ExperimentTable run_experiment(const ExperimentSpec& spec, const ExperimentProgress& progress = {});

/// JSON description:
///   {"datasets": {"A_train": {"manifest": "a/manifest.jsonl", "split": "train"}, ...},
///    "variants": [{"name": "A only", "train_on": ["A_train"]}, ...],
///    "evaluate_on": ["B_test"], "seeds": [1, 2, 3],
///    "model": {...}, "train": {...}}
/// Manifest paths resolve against the spec file's directory; "split" may be
/// "train", "test" or "all".
ExperimentSpec read_experiment_spec(const std::filesystem::path& path);

}  // namespace crackseg
