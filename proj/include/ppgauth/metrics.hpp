#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ppgauth {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Throw UndefinedMetric when the denominator is zero.
double accuracy(const ConfusionCounts& c);     // (TP + TN) / total
double sensitivity(const ConfusionCounts& c);  // TP / (TP + FN)
double specificity(const ConfusionCounts& c);  // TN / (TN + FP)

// Multi-class results reduced one-vs-rest per class, macro-averaged.
struct ClassificationReport {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][prediction]
  std::vector<ConfusionCounts> per_class;
  double accuracy = 0.0;  // fraction of exact matches
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
};

ClassificationReport classification_report(std::span<const int> truth, std::span<const int> predicted,
                                           std::size_t num_classes);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0, 0) endpoint
};

// Points ordered from threshold +inf down to -inf.
struct RocCurve {
  std::vector<RocPoint> points;

  // Starts at (0,0), ends at (1,1), both coordinates in [0,1] and
  // non-decreasing. Throws InvalidArgument otherwise.
  void validate() const;
};

// One point per unique score (TPR/FPR = fraction of genuine/impostor >= the
// score), plus the (0,0) endpoint.
RocCurve roc(std::span<const double> genuine, std::span<const double> impostor);

// Trapezoidal area under a validated curve.
double auc(const RocCurve& curve);

// Metrics CSV with a "metric,value" header; values printed with %.17g.
std::string metrics_csv(const std::vector<std::pair<std::string, double>>& rows);

}  // namespace ppgauth
