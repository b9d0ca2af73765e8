#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crackseg/datapipe.hpp"
#include "crackseg/tensor.hpp"
#include "crackseg/unet.hpp"
#include "json.hpp"

namespace crackseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Pixel tallies with pred = (prob > threshold) and truth = (target > 0.5).
ConfusionCounts confusion(const Tensor& pred_prob, const Tensor& target, double threshold = 0.5);
ConfusionCounts confusion(std::span<const float> pred_prob, std::span<const float> target,
                          double threshold = 0.5);

// Zero-denominator convention: when tp + fp + fn == 0 (nothing predicted,
// nothing to find) every metric is 1. Otherwise an individual 0/0 is 0.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);

enum class Aggregation { micro, per_image_mean };

std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;
  ConfusionCounts counts;  // summed over images under either aggregation
  Aggregation aggregation = Aggregation::micro;
  std::size_t images = 0;
  double threshold = 0.5;

  /// "key: value" lines.
  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// micro: metrics of the summed counts. per_image_mean: mean of per-image
/// metrics.
MetricsReport aggregate(std::span<const ConfusionCounts> per_image, Aggregation aggregation,
                        double threshold = 0.5);

/// Runs the model on each (image, mask) pair, one image at a time.
MetricsReport evaluate_dataset(const UNet& model, std::span<const LoadedSample> samples,
                               double threshold = 0.5, Aggregation aggregation = Aggregation::micro);

/// Loads each sample from disk first; every sample must carry a mask.
MetricsReport evaluate_dataset(const UNet& model, std::span<const Sample> samples,
                               double threshold = 0.5, Aggregation aggregation = Aggregation::micro);

}  // namespace crackseg
