#include <doctest.h>

#include <algorithm>

#include "crackseg/errors.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/rng.hpp"
#include "metrics_oracle.hpp"

using namespace crackseg;
using namespace crackseg::testing;

namespace {

ConfusionCounts counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn = 0) {
  return {tp, fp, fn, tn};
}

}  // namespace

TEST_CASE("confusion and metrics match the pixel-loop oracle exactly") {
  const auto pairs = random_pairs(1000, 77);
  int empty_empty = 0, all_wrong = 0;
  for (const auto& [prob, truth] : pairs) {
    const auto c = confusion(Tensor({1, 1, 16, 16}, prob), Tensor({1, 1, 16, 16}, truth), 0.5);
    const auto o = oracle_counts(prob, truth, 0.5, 16);
    REQUIRE(c.tp == o.tp);
    REQUIRE(c.fp == o.fp);
    REQUIRE(c.fn == o.fn);
    REQUIRE(c.tn == o.tn);
    const auto m = oracle_metrics(o);
    CHECK(precision(c) == m.precision);
    CHECK(recall(c) == m.recall);
    CHECK(f1(c) == m.f1);
    CHECK(iou(c) == m.iou);
    empty_empty += o.tp + o.fp + o.fn == 0;
    all_wrong += o.tp == 0 && o.tn == 0;
  }
  CHECK(empty_empty >= 100);
  CHECK(all_wrong >= 100);
}

TEST_CASE("confusion edge cases") {
  const Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0f), zeros = Tensor::zeros({1, 1, 4, 4});
  CHECK(confusion(ones, zeros) == counts(0, 16, 0, 0));
  const auto same = confusion(ones, ones);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  CHECK_THROWS_AS(confusion(ones, Tensor::zeros({1, 1, 4, 5})), ShapeError);
  CHECK_THROWS_AS(confusion(ones, ones, 1.0), ConfigError);
  CHECK_THROWS_AS(confusion(ones, ones, 0.0), ConfigError);
}

TEST_CASE("hand-computed metric values") {
  const auto a = counts(5, 5, 0);
  CHECK(precision(a) == 0.5);
  CHECK(recall(a) == 1.0);
  CHECK(f1(a) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  CHECK(iou(counts(3, 1, 2)) == 0.5);
  CHECK(iou(counts(7, 0, 0, 9)) == 1.0);
  CHECK(iou(counts(0, 4, 6)) == 0.0);

  const auto empty = counts(0, 0, 0, 100);
  CHECK(precision(empty) == 1.0);
  CHECK(recall(empty) == 1.0);
  CHECK(f1(empty) == 1.0);
  CHECK(iou(empty) == 1.0);

  // Nothing predicted but cracks present: the 0/0 precision counts as 0.
  const auto no_recall = counts(0, 0, 5);
  CHECK(precision(no_recall) == 0.0);
  CHECK(recall(no_recall) == 0.0);
  CHECK(f1(no_recall) == 0.0);
}

TEST_CASE("IoU never exceeds F1 and F1 is the harmonic mean") {
  Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto c = counts(rng.below(50), rng.below(50), rng.below(50), rng.below(50));
    const double i = iou(c), f = f1(c);
    CHECK(i <= f);
    const bool equal_case = c.tp == 0 || c.fp + c.fn == 0;
    CHECK((i == f) == equal_case);
    for (double v : {precision(c), recall(c), f, i}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const double p = precision(c), r = recall(c);
    if (p + r > 0) CHECK(f == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-14));
  }
}

TEST_CASE("metrics are invariant under a joint pixel permutation") {
  Rng rng(9);
  const auto pairs = random_pairs(50, 10);
  for (const auto& [prob, truth] : pairs) {
    std::vector<std::size_t> order(256);
    for (std::size_t i = 0; i < 256; ++i) order[i] = i;
    rng.shuffle(std::span(order));
    std::vector<float> p2(256), t2(256);
    for (std::size_t i = 0; i < 256; ++i) p2[i] = prob[order[i]], t2[i] = truth[order[i]];
    CHECK(confusion(std::span<const float>(prob), std::span<const float>(truth)) ==
          confusion(std::span<const float>(p2), std::span<const float>(t2)));
  }
}

TEST_CASE("micro and per-image aggregation differ on a perfect plus all-wrong pair") {
  const std::vector<float> truth{1, 1, 0, 0};
  const std::vector<float> perfect{0.9f, 0.9f, 0.1f, 0.1f};
  const std::vector<float> wrong{0.1f, 0.1f, 0.9f, 0.9f};
  const std::vector<ConfusionCounts> per_image{
      confusion(std::span<const float>(perfect), std::span<const float>(truth)),
      confusion(std::span<const float>(wrong), std::span<const float>(truth))};
  const auto mean = aggregate(per_image, Aggregation::per_image_mean);
  const auto micro = aggregate(per_image, Aggregation::micro);
  CHECK(mean.iou == 0.5);
  CHECK(micro.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));  // tp 2 over tp+fp+fn = 6
  CHECK(micro.counts == mean.counts);

  const std::vector<ConfusionCounts> one{per_image[1]};
  const auto a = aggregate(one, Aggregation::micro), b = aggregate(one, Aggregation::per_image_mean);
  CHECK(a.iou == b.iou);
  CHECK(a.f1 == b.f1);
  CHECK(a.precision == b.precision);
}

TEST_CASE("raising the threshold never adds true or false positives") {
  const auto pairs = random_pairs(20, 11);
  for (const auto& [prob, truth] : pairs) {
    const auto lo = confusion(std::span<const float>(prob), std::span<const float>(truth), 0.4);
    const auto mid = confusion(std::span<const float>(prob), std::span<const float>(truth), 0.5);
    const auto hi = confusion(std::span<const float>(prob), std::span<const float>(truth), 0.6);
    CHECK(lo.tp >= mid.tp);
    CHECK(mid.tp >= hi.tp);
    CHECK(lo.fp >= mid.fp);
    CHECK(mid.fp >= hi.fp);
    CHECK(lo.fn <= mid.fn);
    CHECK(mid.fn <= hi.fn);
  }
}

TEST_CASE("reports serialise every field") {
  const std::vector<ConfusionCounts> per_image{counts(3, 1, 2, 10)};
  const auto r = aggregate(per_image, Aggregation::micro);
  const auto text = r.to_text();
  CHECK(text.find("iou: 0.500000") != std::string::npos);
  CHECK(text.find("aggregation: micro") != std::string::npos);
  CHECK(text.find("tn: 10") != std::string::npos);
  CHECK(r.to_json().at("tp") == 3);
  CHECK(parse_aggregation("per_image_mean") == Aggregation::per_image_mean);
  CHECK_THROWS_AS(parse_aggregation("macro"), ConfigError);
}

TEST_CASE("dataset evaluation requires masks") {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 1;
  c.widen_factor = 1.0;
  c.in_channels = 1;
  c.input_size = 8;
  const auto model = UNet::build(c, 0);
  std::vector<LoadedSample> samples{{Tensor::zeros({1, 1, 8, 8}), Tensor{}}};
  CHECK_THROWS_AS(evaluate_dataset(model, std::span<const LoadedSample>(samples)), DataError);
  samples[0].mask = Tensor::zeros({1, 1, 8, 8});
  CHECK(evaluate_dataset(model, std::span<const LoadedSample>(samples)).images == 1);
}
