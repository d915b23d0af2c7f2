#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/harness/model.hpp"

namespace irkit::explain {

// Batch scorer over raw-unit feature vectors.
using PredictFn = std::function<std::vector<double>(std::span<const FeatureVector>)>;

enum class Units { Probability, Logit };
std::string_view to_string(Units u);

// Classifiers answer in probability units unless `units` is Logit
// (probabilities are clipped to [1e-12, 1 - 1e-12] before the logit).
// Regression models ignore `units`. The function holds a reference to `model`.
PredictFn model_function(const harness::Model& model, Units units = Units::Probability);

// ---------------------------------------------------------------------------
// Importance

enum class ImportanceMethod { Permutation, Gain, MeanAbsShap };
std::string_view to_string(ImportanceMethod m);

enum class ImportanceMetric { Auc, Accuracy, R2, Rmse, Mae };
std::string_view to_string(ImportanceMetric m);
ImportanceMetric parse_importance_metric(std::string_view text);
ImportanceMetric default_metric(Task task);

struct FeatureScore {
  std::size_t slot = 0;
  std::string feature;
  double score = 0.0;
  double stderr_ = 0.0;     // permutation: across repeats
  double raw_mean = 0.0;    // permutation: signed mean degradation before clamping
  std::size_t rank = 0;     // 1 = most important
};

struct ImportanceReport {
  ImportanceMethod method = ImportanceMethod::Permutation;
  std::string metric;       // permutation only
  double baseline = 0.0;    // unpermuted metric
  std::size_t repeats = 0;
  std::vector<FeatureScore> features;  // active slots, slot order
  std::string note;

  // Features ordered by rank.
  std::vector<FeatureScore> ranked() const;
};

struct PermutationOptions {
  std::size_t repeats = 5;
  std::uint64_t seed = 2024;
  double threshold = 0.5;  // Accuracy only
};

// Score = mean metric degradation over `repeats` shuffles of one column,
// clamped at zero. Degenerate metric on `data` throws UndefinedMetric.
ImportanceReport permutation_importance(const PredictFn& f, std::span<const FeatureVector> x,
                                        std::span<const double> y, const FeatureMask& mask,
                                        ImportanceMetric metric, const PermutationOptions& options = {});
ImportanceReport permutation_importance(const harness::Model& model, const harness::TaskData& data,
                                        ImportanceMetric metric, const PermutationOptions& options = {});

// Total split gain per feature, normalised to sum 1. Forest and GBDT only.
ImportanceReport gain_importance(const harness::Model& model);

// ---------------------------------------------------------------------------
// Shapley values

struct ShapleyOptions {
  std::size_t n_permutations = 256;
  std::uint64_t seed = 2024;
  std::size_t chunk = 64;  // permutations per batched model call
};

struct Attribution {
  std::string instance_id;
  Units units = Units::Probability;
  double base_value = 0.0;  // mean prediction over the background
  double prediction = 0.0;
  std::array<double, kNumFeatures> phi{};      // 0 for inactive slots
  std::array<double, kNumFeatures> stderr_{};
  FeatureMask mask = FeatureMask::full();
  std::size_t n_permutations = 0;
  // sum(phi) - (prediction - base_value) and its Monte Carlo standard error.
  double efficiency_gap = 0.0;
  double efficiency_stderr = 0.0;
};

// Permutation estimator: each sample draws a feature ordering and a
// background row (without replacement, cycling through the background),
// then switches features to the instance values in order. Per-feature
// standard errors treat draws as independent, which overstates them.
// efficiency_stderr carries the finite-population correction and a
// floating-point floor.
// Inactive slots are never visited, so their phi is exactly 0.
Attribution shapley_sampling(const PredictFn& f, std::span<const FeatureVector> background,
                             const FeatureVector& instance, const FeatureMask& mask,
                             const ShapleyOptions& options = {});

// Base value over the background, computed once and shared across instances.
Attribution shapley_sampling(const PredictFn& f, std::span<const FeatureVector> background,
                             double base_value, const FeatureVector& instance,
                             const FeatureMask& mask, const ShapleyOptions& options);

// Instance i uses a seed derived from (options.seed, i).
std::vector<Attribution> shapley_many(const PredictFn& f, std::span<const FeatureVector> background,
                                      std::span<const FeatureVector> instances,
                                      std::span<const std::string> ids, const FeatureMask& mask,
                                      const ShapleyOptions& options = {});

// Up to `n` rows drawn without replacement.
std::vector<FeatureVector> sample_background(std::span<const FeatureVector> rows, std::size_t n = 512,
                                             std::uint64_t seed = 2024);

ImportanceReport shap_importance(std::span<const Attribution> attributions);

// ---------------------------------------------------------------------------
// Dependence

struct DependencePoint {
  std::string instance_id;
  double value = 0.0;  // raw units, vocabulary code for categoricals
  double shap = 0.0;
};

// `attributions` is parallel to `instances`. Unknown or inactive feature
// throws ConfigError.
std::vector<DependencePoint> dependence_export(std::span<const Attribution> attributions,
                                               std::span<const FeatureVector> instances,
                                               std::string_view feature);

// ---------------------------------------------------------------------------
// CSV

std::string importance_csv(const ImportanceReport& report);
std::string shap_csv(std::span<const Attribution> attributions);
std::string dependence_csv(std::span<const DependencePoint> points);

}  // namespace irkit::explain
