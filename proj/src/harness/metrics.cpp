#include "irkit/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "irkit/errors.hpp"

namespace irkit::harness {
namespace {

void check_inputs(std::span<const double> scores, std::span<const double> labels, const char* op) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw DomainError(std::string(op) + ": labels must be 0 or 1");
    pos += y == 1.0;
  }
  if (pos == 0 || pos == labels.size()) {
    throw UndefinedMetric(std::string(op) + ": both classes must be present");
  }
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

double ratio(std::size_t num, std::size_t den, const char* name, std::vector<std::string>& flags) {
  if (den == 0) {
    flags.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  check_inputs(scores, labels, "auc");
  for (double s : scores) {
    if (std::isnan(s)) throw DomainError("auc: NaN score");
  }
  // Twice the Mann-Whitney credit in integers, so ties stay exact.
  const auto idx = order_by_score_desc(scores);
  long long twice = 0, neg_below = 0;
  long long pos_total = 0, neg_total = 0;
  for (double y : labels) (y == 1.0 ? pos_total : neg_total) += 1;
  neg_below = neg_total;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    long long pos = 0, neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1.0 ? pos : neg) += 1;
      ++j;
    }
    neg_below -= neg;
    twice += pos * (2 * neg_below + neg);
    i = j;
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pos_total * neg_total);
}

std::string_view to_string(Averaging a) { return a == Averaging::Macro ? "macro" : "binary"; }

Averaging parse_averaging(std::string_view text) {
  if (text == "binary") return Averaging::BinaryPositive;
  if (text == "macro") return Averaging::Macro;
  throw ConfigError("unknown averaging '" + std::string(text) + "' (expected binary or macro)");
}

ClassificationMetrics classification_report(std::span<const double> scores,
                                            std::span<const double> labels, double threshold,
                                            Averaging averaging) {
  ClassificationMetrics m;
  m.auc = auc(scores, labels);
  m.averaging = averaging;
  Confusion& c = m.confusion;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold, truth = labels[i] == 1.0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
  auto f1_of = [](double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; };
  const double p1 = ratio(c.tp, c.tp + c.fp, "precision", m.undefined);
  const double r1 = ratio(c.tp, c.tp + c.fn, "recall", m.undefined);
  if (averaging == Averaging::BinaryPositive) {
    m.precision = p1;
    m.recall = r1;
    m.f1 = f1_of(p1, r1);
  } else {
    const double p0 = ratio(c.tn, c.tn + c.fn, "precision(negative)", m.undefined);
    const double r0 = ratio(c.tn, c.tn + c.fp, "recall(negative)", m.undefined);
    m.precision = 0.5 * (p0 + p1);
    m.recall = 0.5 * (r0 + r1);
    m.f1 = 0.5 * (f1_of(p0, r0) + f1_of(p1, r1));
  }
  return m;
}

RegressionMetrics regression_report(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw ShapeError("regression_report: length mismatch");
  if (preds.empty()) throw DomainError("regression_report: empty input");
  const double n = static_cast<double>(preds.size());
  const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  double abs = 0.0, sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - targets[i];
    abs += std::abs(e);
    sse += e * e;
    sst += (targets[i] - mean) * (targets[i] - mean);
  }
  if (sst == 0.0) throw UndefinedMetric("regression_report: r2 undefined for constant targets");
  return {abs / n, std::sqrt(sse / n), 1.0 - sse / sst};
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> labels) {
  check_inputs(scores, labels, "roc_points");
  const auto idx = order_by_score_desc(scores);
  double pos_total = 0, neg_total = 0;
  for (double y : labels) (y == 1.0 ? pos_total : neg_total) += 1;
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] == 1.0 ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / neg_total, static_cast<double>(tp) / pos_total, s});
  }
  return pts;
}

double trapezoid_area(std::span<const RocPoint> points) {
  double a = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    a += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
  }
  return a;
}

}  // namespace irkit::harness
