#include "ppgauth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ppgauth/error.hpp"

namespace ppgauth {

namespace {
double ratio(std::uint64_t num, std::uint64_t den, const char* name) {
  if (den == 0) throw UndefinedMetric(std::string(name) + " is undefined: zero denominator");
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total(), "accuracy"); }
double sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn, "sensitivity"); }
double specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp, "specificity"); }

ClassificationReport classification_report(std::span<const int> truth, std::span<const int> predicted,
                                           std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw InvalidArgument("classification_report: length mismatch");
  if (truth.empty()) throw UndefinedMetric("classification_report: no examples");
  if (num_classes < 2) throw InvalidArgument("classification_report: need at least 2 classes");
  ClassificationReport r;
  r.num_classes = num_classes;
  r.confusion.assign(num_classes, std::vector<std::uint64_t>(num_classes, 0));
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
      throw InvalidArgument("classification_report: label out of range");
    }
    ++r.confusion[t][p];
    if (t == p) ++hits;
  }
  const std::uint64_t n = truth.size();
  r.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  double sens = 0.0, spec = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    ConfusionCounts c;
    c.tp = r.confusion[k][k];
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (j == k) continue;
      c.fn += r.confusion[k][j];
      c.fp += r.confusion[j][k];
    }
    c.tn = n - c.tp - c.fn - c.fp;
    r.per_class.push_back(c);
    sens += sensitivity(c);
    spec += specificity(c);
  }
  r.macro_sensitivity = sens / static_cast<double>(num_classes);
  r.macro_specificity = spec / static_cast<double>(num_classes);
  return r;
}

void RocCurve::validate() const {
  if (points.size() < 2) throw InvalidArgument("RocCurve: need at least two points");
  const auto& a = points.front();
  const auto& b = points.back();
  if (a.fpr != 0.0 || a.tpr != 0.0 || b.fpr != 1.0 || b.tpr != 1.0) {
    throw InvalidArgument("RocCurve: must run from (0,0) to (1,1)");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.fpr >= 0.0 && p.fpr <= 1.0 && p.tpr >= 0.0 && p.tpr <= 1.0)) {
      throw InvalidArgument("RocCurve: rate outside [0, 1]");
    }
    if (i > 0 && (p.fpr < points[i - 1].fpr || p.tpr < points[i - 1].tpr)) {
      throw InvalidArgument("RocCurve: rates must be non-decreasing");
    }
  }
}

RocCurve roc(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw InvalidArgument("roc: empty score list");
  std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
  for (double s : g) {
    if (!std::isfinite(s)) throw InvalidArgument("roc: non-finite score");
  }
  for (double s : im) {
    if (!std::isfinite(s)) throw InvalidArgument("roc: non-finite score");
  }
  std::sort(g.begin(), g.end(), std::greater<>());
  std::sort(im.begin(), im.end(), std::greater<>());
  std::vector<double> thresholds(g);
  thresholds.insert(thresholds.end(), im.begin(), im.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve c;
  c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  std::size_t gi = 0, ii = 0;
  for (double tau : thresholds) {
    while (gi < g.size() && g[gi] >= tau) ++gi;
    while (ii < im.size() && im[ii] >= tau) ++ii;
    c.points.push_back({static_cast<double>(ii) / ni, static_cast<double>(gi) / ng, tau});
  }
  c.validate();
  return c;
}

double auc(const RocCurve& curve) {
  curve.validate();
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

std::string metrics_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string out = "metric,value\n";
  char buf[40];
  for (const auto& [name, value] : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out += name + "," + buf + "\n";
  }
  return out;
}

}  // namespace ppgauth
