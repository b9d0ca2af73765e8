#include "crackseg/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "crackseg/config_io.hpp"
#include "crackseg/metrics.hpp"

namespace crackseg {

using nlohmann::json;

double ExperimentRow::iou_mean() const {
  return iou.empty() ? 0.0 : std::accumulate(iou.begin(), iou.end(), 0.0) / static_cast<double>(iou.size());
}
double ExperimentRow::iou_min() const { return iou.empty() ? 0.0 : *std::min_element(iou.begin(), iou.end()); }
double ExperimentRow::iou_max() const { return iou.empty() ? 0.0 : *std::max_element(iou.begin(), iou.end()); }
double ExperimentRow::f1_mean() const {
  return f1.empty() ? 0.0 : std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

const ExperimentRow& ExperimentTable::row(const std::string& variant, const std::string& evaluated_on) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.evaluated_on == evaluated_on) return r;
  }
  throw Error("no experiment row for " + variant + " on " + evaluated_on);
}

std::string ExperimentTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "model" << std::setw(24) << "trained_on" << std::setw(14)
     << "evaluated_on" << std::setw(22) << "iou" << "f1\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    std::ostringstream iou, f1;
    iou << std::fixed << std::setprecision(4) << r.iou_mean();
    f1 << std::fixed << std::setprecision(4) << r.f1_mean();
    if (seeds.size() > 1) iou << " [" << r.iou_min() << ", " << r.iou_max() << "]";
    os << std::setw(24) << r.variant << std::setw(24) << r.trained_on << std::setw(14) << r.evaluated_on
       << std::setw(22) << iou.str() << f1.str() << '\n';
  }
  return os.str();
}

json ExperimentTable::to_json() const {
  json out = {{"seeds", seeds}, {"rows", json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({{"model", r.variant},
                           {"trained_on", r.trained_on},
                           {"evaluated_on", r.evaluated_on},
                           {"iou", r.iou},
                           {"f1", r.f1},
                           {"iou_mean", r.iou_mean()},
                           {"iou_min", r.iou_min()},
                           {"iou_max", r.iou_max()},
                           {"f1_mean", r.f1_mean()}});
  }
  return out;
}

ExperimentTable run_experiment(const ExperimentSpec& spec, const ExperimentProgress& progress) {
  if (spec.variants.empty()) throw ConfigError("experiment has no variants");
  if (spec.seeds.empty()) throw ConfigError("experiment has no seeds");
  auto dataset = [&](const std::string& name) -> const std::vector<Sample>& {
    auto it = spec.datasets.find(name);
    if (it == spec.datasets.end()) throw ConfigError("experiment references unknown dataset '" + name + "'");
    return it->second;
  };

  std::map<std::string, std::vector<LoadedSample>> eval_sets;
  for (const auto& name : spec.evaluate_on) eval_sets[name] = load_training_set(dataset(name));

  ExperimentTable table;
  table.seeds = spec.seeds;
  for (const auto& variant : spec.variants) {
    std::vector<Sample> train_samples;
    std::string trained_on;
    for (const auto& name : variant.train_on) {
      const auto& d = dataset(name);
      train_samples.insert(train_samples.end(), d.begin(), d.end());
      trained_on += (trained_on.empty() ? "" : "+") + name;
    }
    const auto loaded = load_training_set(train_samples);

    std::vector<ExperimentRow> rows;
    for (const auto& name : spec.evaluate_on) rows.push_back({variant.name, trained_on, name, {}, {}});
    for (auto seed : spec.seeds) {
      TrainConfig config = spec.train;
      config.seed = seed;
      TrainState state = init_training(spec.model, config);
      TrainHooks hooks;
      if (progress) {
        hooks.on_episode_end = [&](const TrainState&, const EpisodeRecord& rec) {
          progress(variant.name, seed, rec);
        };
      }
      train(state, loaded, hooks);
      for (std::size_t e = 0; e < spec.evaluate_on.size(); ++e) {
        const auto report = evaluate_dataset(state.model, eval_sets.at(spec.evaluate_on[e]), config.threshold);
        rows[e].iou.push_back(report.iou);
        rows[e].f1.push_back(report.f1);
      }
    }
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  }
  return table;
}

ExperimentSpec read_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment spec " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentSpec spec;
  try {
    for (const auto& [name, d] : j.at("datasets").items()) {
      std::filesystem::path manifest_path = d.at("manifest").get<std::string>();
      if (manifest_path.is_relative()) manifest_path = path.parent_path() / manifest_path;
      const DatasetManifest manifest = read_manifest(manifest_path);
      const std::string split = d.value("split", std::string("all"));
      spec.datasets[name] = split == "all" ? manifest.samples : manifest.select(parse_split(split));
    }
    for (const auto& v : j.at("variants")) {
      spec.variants.push_back({v.at("name").get<std::string>(), v.at("train_on").get<std::vector<std::string>>()});
    }
    spec.evaluate_on = j.at("evaluate_on").get<std::vector<std::string>>();
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("model")) spec.model = unet_config_from_json(j.at("model"));
    if (j.contains("train")) spec.train = train_config_from_json(j.at("train"));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return spec;
}

}  // namespace crackseg
