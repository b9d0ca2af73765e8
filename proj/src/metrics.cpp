#include "crackseg/metrics.hpp"

#include <iomanip>
#include <sstream>

namespace crackseg {

ConfusionCounts confusion(std::span<const float> pred_prob, std::span<const float> target,
                          double threshold) {
  if (pred_prob.size() != target.size()) {
    throw ShapeError("confusion: " + std::to_string(pred_prob.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    const bool p = static_cast<double>(pred_prob[i]) > threshold;
    const bool t = target[i] > 0.5f;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ConfusionCounts confusion(const Tensor& pred_prob, const Tensor& target, double threshold) {
  if (pred_prob.shape() != target.shape()) {
    throw ShapeError("confusion: prediction " + shape_string(pred_prob.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  return confusion(pred_prob.data(), target.data(), threshold);
}

namespace {

bool empty_empty(const ConfusionCounts& c) { return c.tp + c.fp + c.fn == 0; }

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double precision(const ConfusionCounts& c) { return empty_empty(c) ? 1.0 : ratio(c.tp, c.tp + c.fp); }

double recall(const ConfusionCounts& c) { return empty_empty(c) ? 1.0 : ratio(c.tp, c.tp + c.fn); }

// 2PR/(P+R) reduced to counts: a single correctly rounded division.
double f1(const ConfusionCounts& c) { return empty_empty(c) ? 1.0 : ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }

double iou(const ConfusionCounts& c) { return empty_empty(c) ? 1.0 : ratio(c.tp, c.tp + c.fp + c.fn); }

std::string_view aggregation_name(Aggregation a) {
  return a == Aggregation::micro ? "micro" : "per_image_mean";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "micro") return Aggregation::micro;
  if (text == "per_image_mean") return Aggregation::per_image_mean;
  throw ConfigError("aggregation must be 'micro' or 'per_image_mean', got '" + std::string(text) + "'");
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "aggregation: " << aggregation_name(aggregation) << '\n'
     << "threshold: " << threshold << '\n'
     << "images: " << images << '\n'
     << "precision: " << precision << '\n'
     << "recall: " << recall << '\n'
     << "f1: " << f1 << '\n'
     << "iou: " << iou << '\n'
     << "tp: " << counts.tp << '\n'
     << "fp: " << counts.fp << '\n'
     << "fn: " << counts.fn << '\n'
     << "tn: " << counts.tn << '\n';
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  return {{"aggregation", aggregation_name(aggregation)},
          {"threshold", threshold},
          {"images", images},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"iou", iou},
          {"tp", counts.tp},
          {"fp", counts.fp},
          {"fn", counts.fn},
          {"tn", counts.tn}};
}

MetricsReport aggregate(std::span<const ConfusionCounts> per_image, Aggregation aggregation,
                        double threshold) {
  MetricsReport report;
  report.aggregation = aggregation;
  report.images = per_image.size();
  report.threshold = threshold;
  for (const auto& c : per_image) report.counts += c;
  if (aggregation == Aggregation::micro || per_image.empty()) {
    report.precision = precision(report.counts);
    report.recall = recall(report.counts);
    report.f1 = f1(report.counts);
    report.iou = iou(report.counts);
    return report;
  }
  for (const auto& c : per_image) {
    report.precision += precision(c);
    report.recall += recall(c);
    report.f1 += f1(c);
    report.iou += iou(c);
  }
  const double n = static_cast<double>(per_image.size());
  report.precision /= n;
  report.recall /= n;
  report.f1 /= n;
  report.iou /= n;
  return report;
}

MetricsReport evaluate_dataset(const UNet& model, std::span<const LoadedSample> samples,
                               double threshold, Aggregation aggregation) {
  NoGradGuard no_grad;
  std::vector<ConfusionCounts> per_image;
  per_image.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].mask.defined()) {
      throw DataError("evaluation sample " + std::to_string(i) + " has no mask");
    }
    per_image.push_back(confusion(model.forward(samples[i].image), samples[i].mask, threshold));
  }
  return aggregate(per_image, aggregation, threshold);
}

MetricsReport evaluate_dataset(const UNet& model, std::span<const Sample> samples, double threshold,
                               Aggregation aggregation) {
  for (const auto& s : samples) {
    if (!s.mask_path) throw DataError("evaluation sample " + s.image_path.string() + " has no mask");
  }
  NoGradGuard no_grad;
  std::vector<ConfusionCounts> per_image;
  per_image.reserve(samples.size());
  for (const auto& s : samples) {
    const LoadedSample loaded = load_sample(s);
    per_image.push_back(confusion(model.forward(loaded.image), loaded.mask, threshold));
  }
  return aggregate(per_image, aggregation, threshold);
}

}  // namespace crackseg
