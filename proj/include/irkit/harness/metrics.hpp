#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace irkit::harness {

// Mann-Whitney AUC with ties credited one half. Labels are 0/1.
// Throws UndefinedMetric unless both classes are present.
double auc(std::span<const double> scores, std::span<const double> labels);

enum class Averaging { BinaryPositive, Macro };
std::string_view to_string(Averaging a);
Averaging parse_averaging(std::string_view text);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassificationMetrics {
  double auc = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  Confusion confusion;
  Averaging averaging = Averaging::BinaryPositive;
  // Set when a ratio had a zero denominator and was reported as 0.
  std::vector<std::string> undefined;
};

// Predicted positive iff score >= threshold.
ClassificationMetrics classification_report(std::span<const double> scores,
                                            std::span<const double> labels,
                                            double threshold = 0.5,
                                            Averaging averaging = Averaging::BinaryPositive);

struct RegressionMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

// r2 = 1 - SSE/SST, SST about the mean of `targets`.
RegressionMetrics regression_report(std::span<const double> preds, std::span<const double> targets);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive
};

// Staircase from (0,0) to (1,1), one vertex per distinct score.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> labels);
double trapezoid_area(std::span<const RocPoint> points);

}  // namespace irkit::harness
