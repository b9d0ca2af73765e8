// Acceptance suite: one PASS/FAIL line per criterion, each with its
// measured values and runtime. Exit status is the number of failures.
//
//   acceptance            run everything
//   acceptance AC3 AC5    run a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crackseg/checkpoint.hpp"
#include "crackseg/experiment.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/synthgen.hpp"
#include "crackseg/trainer.hpp"
#include "crackseg/unet.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "metrics_oracle.hpp"
#include "scratch.hpp"

using namespace crackseg;
using namespace crackseg::testing;

namespace {

// Model sizes for the two training criteria. Fixed once, see README.
constexpr int kOverfitDepth = 2;
constexpr int kOverfitBase = 16;
constexpr int kHybridDepth = 2;
constexpr int kHybridBase = 8;
constexpr double kHybridLearningRate = 1e-3;
constexpr int kHybridEpochs = 10;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double limit_seconds;
  std::function<Verdict()> run;
};

std::string fmt(const char* format, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---------------------------------------------------------------- AC1

Verdict gradients() {
  constexpr std::size_t kProbes = 100;
  constexpr double h = 1e-4;
  Rng rng(2024);
  std::ostringstream detail;
  double worst_op = 0;
  std::size_t min_probes = SIZE_MAX;
  auto record = [&](const char* name, GradCheckResult r) {
    worst_op = std::max(worst_op, r.max_rel_error);
    min_probes = std::min(min_probes, r.probes);
    detail << name << '=' << fmt("%.1e", r.max_rel_error) << ' ';
  };

  {
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    record("conv_same", check_gradients(
        {x, w, b}, [&] { auto y = conv2d(x, w, b, Padding::same); return sum(mul(y, y)); }, kProbes, 1, h));
    record("conv_valid", check_gradients(
        {x, w, b}, [&] { auto y = conv2d(x, w, b, Padding::valid); return sum(mul(y, y)); }, kProbes, 2, h));
  }
  {
    auto x = random_tensor({1, 3, 6, 6}, rng);
    auto w = random_tensor({3, 3, 2, 2}, rng);
    auto b = random_tensor({3}, rng);
    record("upconv2", check_gradients(
        {x, w, b}, [&] { auto y = upconv2(x, w, b); return sum(mul(y, y)); }, kProbes, 3, h));
  }
  {
    auto x = random_tensor({2, 2, 8, 8}, rng);
    auto near_tie = [&](std::size_t, std::size_t idx) {
      const std::size_t plane = idx / 64, y = (idx % 64) / 8, xx = idx % 8;
      std::vector<double> w;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) w.push_back(x.data()[plane * 64 + ((y & ~1u) + dy) * 8 + (xx & ~1u) + dx]);
      std::sort(w.begin(), w.end());
      return w[3] - w[2] < 2 * h;
    };
    auto wts = random_tensor({2, 2, 4, 4}, rng, -1, 1, false);
    record("maxpool2", check_gradients({x}, [&] { return sum(mul(maxpool2(x), wts)); }, kProbes, 4, h, near_tie));
  }
  {
    auto x = random_tensor({2, 3, 5, 5}, rng, -3, 3);
    auto wts = random_tensor({2, 3, 5, 5}, rng, -1, 1, false);
    auto off_kink = [&](std::size_t, std::size_t i) { return std::abs(x.data()[i]) < 2 * h; };
    record("relu", check_gradients({x}, [&] { return sum(mul(relu(x), wts)); }, kProbes, 5, h, off_kink));
    record("sigmoid", check_gradients({x}, [&] { return sum(mul(sigmoid(x), wts)); }, kProbes, 6, h));
    record("mul", check_gradients({x}, [&] { return sum(mul(x, x)); }, kProbes, 7, h));
  }
  {
    auto a = random_tensor({1, 2, 6, 6}, rng);
    auto b = random_tensor({1, 3, 6, 6}, rng);
    auto wts = random_tensor({1, 5, 6, 6}, rng, -1, 1, false);
    record("concat", check_gradients({a, b}, [&] { return sum(mul(concat_channels(a, b), wts)); }, kProbes, 8, h));
    record("upsample2", check_gradients({b}, [&] { auto y = upsample2(b); return sum(mul(y, y)); }, kProbes, 9, h));
  }
  {
    auto pred = random_tensor({1, 1, 12, 12}, rng, 0.02, 0.98);
    std::vector<double> t(144);
    for (auto& v : t) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    const Tensor64 target({1, 1, 12, 12}, t);
    record("bce", check_gradients({pred}, [&] { return bce_loss(pred, target); }, kProbes, 10, h));
  }

  // Full net, every parameter probed. Biases are randomised so no region sits
  // exactly on a ReLU kink; h is small for the same reason.
  auto model = UNet64::build(tiny_unet(16, 2), 8);
  for (auto& p : model.named_parameters()) {
    if (p.name.ends_with(".bias")) {
      auto tensor = p.tensor;
      for (auto& v : tensor.data()) v = rng.uniform(-0.1, 0.1);
    }
  }
  auto input = random_tensor({1, 1, 16, 16}, rng, 0, 1, false);
  std::vector<double> t(256);
  for (auto& v : t) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
  const Tensor64 target({1, 1, 16, 16}, t);
  const auto e2e = check_gradients(
      model.parameters(), [&] { return bce_loss(model.forward(input), target); }, model.parameter_count(), 11,
      1e-6);

  detail << "| op max " << fmt("%.2e", worst_op) << " (<1e-4), min probes " << min_probes << " | unet "
         << fmt("%.2e", e2e.max_rel_error) << " (<1e-3) over " << e2e.probes << " params";
  return {worst_op < 1e-4 && min_probes >= 100 && e2e.max_rel_error < 1e-3 && e2e.probes >= 100, detail.str()};
}

// ---------------------------------------------------------------- AC2

Verdict metrics_oracle() {
  const auto pairs = random_pairs(1000, 99);
  std::size_t mismatches = 0, empty_empty = 0, all_wrong = 0;
  for (const auto& [prob, truth] : pairs) {
    const Tensor p({1, 1, 16, 16}, prob), t({1, 1, 16, 16}, truth);
    const auto c = confusion(p, t, 0.5);
    const auto o = oracle_counts(prob, truth, 0.5, 16);
    const auto om = oracle_metrics(o);
    if (o.tp == 0 && o.fp == 0 && o.fn == 0) ++empty_empty;
    if (o.tp == 0 && o.tn == 0) ++all_wrong;
    const bool same = c.tp == o.tp && c.fp == o.fp && c.fn == o.fn && c.tn == o.tn &&
                      precision(c) == om.precision && recall(c) == om.recall && f1(c) == om.f1 &&
                      iou(c) == om.iou;
    if (!same) ++mismatches;
  }
  return {mismatches == 0 && empty_empty > 0 && all_wrong > 0,
          fmt("%zu pairs, %zu mismatches, %zu empty-empty, %zu all-wrong", pairs.size(), mismatches, empty_empty,
              all_wrong)};
}

// ---------------------------------------------------------------- AC3

Verdict overfit() {
  std::vector<LoadedSample> samples;
  for (std::uint64_t i = 0; i < 8; ++i) {
    const auto g = generate(SynthStyle::A(), 64, sample_seed(SynthStyle::A(), 1, i));
    samples.push_back({image_to_tensor(g.image), binarize_mask(g.mask)});
  }
  UNetConfig model;
  model.depth = kOverfitDepth;
  model.base_channels = kOverfitBase;
  model.widen_factor = 1.5;
  model.in_channels = 1;
  model.input_size = 64;
  TrainConfig config;
  config.batch_size = 5;
  config.learning_rate = 1e-4;
  config.episodes = 300;
  config.augment = false;
  config.seed = 1;
  auto state = init_training(model, config);
  const auto history = train(state, samples);
  const double loss = history.episodes.back().mean_loss;
  const auto report = evaluate_dataset(state.model, samples);
  return {loss < 0.05 && report.iou > 0.9,
          fmt("depth %d base %d widen 1.5, 300 epochs: train BCE %.4f (<0.05), train micro-IoU %.4f (>0.9)",
              model.depth, model.base_channels, loss, report.iou)};
}

// ---------------------------------------------------------------- AC4

Verdict hybrid() {
  const auto dir = scratch_dir("acceptance_hybrid");
  const auto a = generate_corpus(SynthStyle::A(), 400, 64, 11, dir / "a");
  const auto b = make_splits(generate_corpus(SynthStyle::B(), 160, 64, 12, dir / "b"), {{"B", {70, 90}}}, 13);
  ExperimentSpec spec;
  spec.datasets["A"] = a.samples;
  spec.datasets["B_train"] = b.select(Split::train);
  spec.datasets["B_test"] = b.select(Split::test);
  spec.variants = {{"A only", {"A"}}, {"A+70B", {"A", "B_train"}}};
  spec.evaluate_on = {"B_test"};
  spec.seeds = {1, 2, 3};
  spec.model.depth = kHybridDepth;
  spec.model.base_channels = kHybridBase;
  spec.model.widen_factor = 1.5;
  spec.model.in_channels = 1;
  spec.model.input_size = 64;
  spec.train.batch_size = 5;
  spec.train.learning_rate = kHybridLearningRate;
  spec.train.episodes = kHybridEpochs;
  const auto table = run_experiment(spec);
  std::filesystem::remove_all(dir);

  const auto& only_a = table.row("A only", "B_test");
  const auto& hybrid = table.row("A+70B", "B_test");
  bool every_seed = true;
  std::ostringstream per_seed;
  for (std::size_t i = 0; i < table.seeds.size(); ++i) {
    every_seed = every_seed && only_a.iou[i] < hybrid.iou[i];
    per_seed << fmt(" seed %llu: %.3f vs %.3f;", static_cast<unsigned long long>(table.seeds[i]), only_a.iou[i],
                    hybrid.iou[i]);
  }
  const double gain = hybrid.iou_mean() - only_a.iou_mean();
  return {gain > 0.05 && every_seed,
          fmt("B-test micro-IoU A-only %.3f, A+70B %.3f, gain %.3f (>0.05);", only_a.iou_mean(), hybrid.iou_mean(),
              gain) +
              per_seed.str()};
}

// ---------------------------------------------------------------- AC5

Verdict tiling() {
  Rng rng(5);
  Raster big(5472, 3648, 1);
  for (auto& p : big.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const auto tiles = tile_image(big, {});
  const auto stitched = stitch_predictions(tiles, big.width, big.height);
  std::size_t mismatches = 0;
  const int covered_w = big.width / 256 * 256, covered_h = big.height / 256 * 256;
  for (int y = 0; y < covered_h; ++y) {
    for (int x = 0; x < covered_w; ++x) {
      const auto i = static_cast<std::size_t>(y) * big.width + x;
      if (stitched.pixels[i] != big.pixels[i]) ++mismatches;
    }
  }
  return {tiles.size() == 294 && mismatches == 0,
          fmt("%zu tiles (expected 294), covered %dx%d, %zu stitch mismatches", tiles.size(), covered_w, covered_h,
              mismatches)};
}

// ---------------------------------------------------------------- AC6

std::size_t enumerate_layers(const UNetConfig& c) {
  std::vector<std::size_t> ch;
  for (int i = 0; i < c.depth; ++i) {
    ch.push_back(c.widen_factor == 1.0
                     ? static_cast<std::size_t>(c.base_channels) << i
                     : static_cast<std::size_t>(std::max(1L, std::lround(c.base_channels * c.widen_factor * (1 << i)))));
  }
  auto layer = [](std::size_t k, std::size_t cin, std::size_t cout) { return k * k * cin * cout + cout; };
  std::size_t total = 0, cin = static_cast<std::size_t>(c.in_channels);
  for (auto co : ch) {
    total += layer(3, cin, co) + layer(3, co, co);
    cin = co;
  }
  for (int i = c.depth - 2; i >= 0; --i) {
    total += layer(2, ch[i + 1], ch[i]) + layer(3, 2 * ch[i], ch[i]) + layer(3, ch[i], ch[i]);
  }
  return total + layer(1, ch[0], 1);
}

Verdict widening() {
  UNetConfig c;
  c.depth = 5;
  c.base_channels = 64;
  c.widen_factor = 1.5;
  const bool widened = c.level_channels() == std::vector<std::size_t>{96, 192, 384, 768, 1536};
  c.widen_factor = 1.0;
  const bool original = c.level_channels() == std::vector<std::size_t>{64, 128, 256, 512, 1024};
  Rng rng(6);
  int agree = 0;
  for (int trial = 0; trial < 20; ++trial) {
    UNetConfig r;
    r.depth = static_cast<int>(rng.range(2, 5));
    r.base_channels = static_cast<int>(rng.range(1, 6));
    r.widen_factor = rng.bernoulli(0.3) ? 1.0 : rng.uniform(0.5, 2.5);
    r.in_channels = static_cast<int>(rng.range(1, 3));
    r.input_size = static_cast<int>(r.size_divisor());
    const auto closed = count_parameters(r);
    if (closed == enumerate_layers(r) && closed == UNet::build(r, 1).parameter_count()) ++agree;
  }
  return {widened && original && agree == 20,
          fmt("widen 1.5 schedule %s, widen 1.0 schedule %s, closed form matches %d/20 random configs",
              widened ? "ok" : "WRONG", original ? "ok" : "WRONG", agree)};
}

// ---------------------------------------------------------------- AC7

Verdict determinism() {
  const auto dir = scratch_dir("acceptance_determinism");
  const auto samples = stripe_samples(7, 16, 3);
  TrainConfig config;
  config.batch_size = 3;
  config.learning_rate = 1e-3;
  config.episodes = 4;
  config.seed = 5;

  auto run_a = init_training(tiny_unet(), config);
  train(run_a, samples);
  auto run_b = init_training(tiny_unet(), config);
  train(run_b, samples);
  save_checkpoint(run_a, dir / "a.ckpt");
  save_checkpoint(run_b, dir / "b.ckpt");
  const bool identical = file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt");

  auto first = init_training(tiny_unet(), config);
  train(first, samples, {.max_episodes = 2});
  save_checkpoint(first, dir / "mid.ckpt");
  auto resumed = load_checkpoint(dir / "mid.ckpt");
  train(resumed, samples);
  save_checkpoint(resumed, dir / "resumed.ckpt");
  const bool resume = file_bytes(dir / "a.ckpt") == file_bytes(dir / "resumed.ckpt") &&
                      flat_parameters(resumed.model) == flat_parameters(run_a.model);
  std::filesystem::remove_all(dir);
  return {identical && resume, fmt("identical runs give identical checkpoints: %s; save-load-continue equals "
                                   "uninterrupted run: %s",
                                   identical ? "yes" : "no", resume ? "yes" : "no")};
}

// ---------------------------------------------------------------- AC8

Verdict shape_range() {
  Rng rng(8);
  int checked = 0, bad = 0;
  for (int trial = 0; trial < 24; ++trial) {
    UNetConfig c;
    c.depth = static_cast<int>(rng.range(2, 4));
    c.base_channels = static_cast<int>(rng.range(1, 4));
    c.widen_factor = rng.bernoulli(0.5) ? 1.0 : 1.5;
    c.in_channels = rng.bernoulli(0.5) ? 1 : 3;
    c.input_size = static_cast<int>(c.size_divisor());
    const auto model = UNet::build(c, trial);
    const std::size_t n = 1 + rng.below(3);
    const std::size_t s = c.size_divisor() * (1 + rng.below(5));
    const auto channels = static_cast<std::size_t>(c.in_channels);
    std::vector<float> v(n * channels * s * s);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-2, 2));
    const auto y = model.forward(Tensor({n, channels, s, s}, v));
    ++checked;
    bool ok = y.shape() == Shape{n, 1, s, s};
    for (float p : y.data()) ok = ok && p > 0.0f && p < 1.0f;
    if (!ok) ++bad;
  }
  return {bad == 0, fmt("%d random configs and sizes, %d violations", checked, bad)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"AC1", "gradient correctness", 120, gradients},
      {"AC2", "metrics oracle equivalence", 10, metrics_oracle},
      {"AC3", "overfit memorization", 300, overfit},
      {"AC4", "hybrid training direction of effect", 1800, hybrid},
      {"AC5", "tiling arithmetic", 5, tiling},
      {"AC6", "channel widening schedule", 60, widening},
      {"AC7", "determinism and resume", 60, determinism},
      {"AC8", "shape/range contract", 60, shape_range},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.limit_seconds;
    const bool pass = v.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s %s %s: %s [%.1f s, limit %.0f s%s]\n", c.id.c_str(), pass ? "PASS" : "FAIL", c.title.c_str(),
                v.detail.c_str(), seconds, c.limit_seconds, in_time ? "" : ", TOO SLOW");
    std::fflush(stdout);
  }
  return failures;
}
