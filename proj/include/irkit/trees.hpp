#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/numcore/matrix.hpp"
#include "irkit/numcore/rng.hpp"

namespace irkit::trees {

// Column type of a design matrix. Categorical columns hold integer codes.
enum class ColumnKind { Numeric, Categorical };

struct DesignMatrix {
  num::Matrix x;
  std::vector<ColumnKind> kinds;

  std::size_t rows() const { return x.rows(); }
  std::size_t cols() const { return x.cols(); }
};

// Flat binary tree. A node with feature < 0 is a leaf.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;       // numeric split: left iff x < threshold
  std::vector<int> categories;  // categorical split: left iff code in set
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output
  double gain = 0.0;   // split gain (internal nodes)
  double cover = 0.0;  // total row weight reaching the node

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> row) const;
  std::size_t depth() const;
  std::size_t leaf_count() const;
};

struct TreeParams {
  std::size_t max_depth = 8;
  double min_leaf = 20;  // minimum row weight per child
  double lambda = 1.0;   // L2 penalty on leaf values
  // Fraction of columns considered at each node; 1 disables subsampling.
  double feature_rate = 1.0;
  // 0 = exact enumeration of sorted unique values; otherwise quantile bins.
  std::size_t histogram_bins = 0;
  // Split categorical columns one-vs-rest instead of by threshold on the code.
  bool one_hot_categorical = true;
};

// Per-column split gain totals accumulated while growing.
using GainVector = std::vector<double>;

// Newton tree on gradients/hessians: leaf = -sum(g) / (sum(h) + lambda).
// `weights` (optional) multiplies each row, e.g. bootstrap multiplicities.
Tree fit_tree_newton(const DesignMatrix& data, std::span<const double> grad,
                     std::span<const double> hess, const TreeParams& params,
                     num::Rng* rng = nullptr, std::span<const double> weights = {},
                     GainVector* gains = nullptr);

// Regression/CART tree on raw targets: leaf = mean target (lambda forced to 0).
Tree fit_tree(const DesignMatrix& data, std::span<const double> targets, const TreeParams& params,
              num::Rng* rng = nullptr, std::span<const double> weights = {},
              GainVector* gains = nullptr);

// ---------------------------------------------------------------------------

// Ordered target statistics: each row's code is
//   (sum of labels of earlier same-category rows + a * prior) / (count + a)
// with rows taken in a seeded random order. prior defaults to the label mean.
std::vector<double> ordered_target_encode(std::span<const int> column,
                                          std::span<const double> labels, std::uint64_t seed,
                                          double a = 1.0,
                                          std::optional<double> prior = std::nullopt);

// The same statistic in a caller-supplied order (order[k] = row visited k-th).
std::vector<double> ordered_target_encode_in_order(std::span<const int> column,
                                                   std::span<const double> labels,
                                                   std::span<const std::size_t> order, double a,
                                                   double prior);

// Statistics used at prediction time: every training row contributes.
struct TargetStatistics {
  double prior = 0.0;
  double a = 1.0;
  std::map<int, std::pair<double, double>> per_category;  // code -> (label sum, count)

  double encode(int code) const;
};

// ---------------------------------------------------------------------------

enum class Loss { Logistic, Squared };
enum class CategoricalMode { OneHot, OrderedTarget };

std::string_view to_string(Loss l);
std::string_view to_string(CategoricalMode m);

struct GbdtConfig {
  std::size_t n_trees = 1000;
  std::size_t max_depth = 8;
  double learning_rate = 0.05;
  double lambda = 1.0;
  double min_leaf = 20;
  Loss loss = Loss::Logistic;
  CategoricalMode cat_mode = CategoricalMode::OrderedTarget;
  bool early_stop = true;
  std::size_t patience = 50;
  std::size_t histogram_bins = 0;
  std::uint64_t seed = 0;
};

struct GbdtModel {
  std::vector<Tree> trees;
  double learning_rate = 0.05;
  double base_score = 0.0;
  Loss loss = Loss::Logistic;
  CategoricalMode cat_mode = CategoricalMode::OrderedTarget;
  std::vector<ColumnKind> kinds;
  // Column index -> prediction-time target statistics (OrderedTarget mode).
  std::map<std::size_t, TargetStatistics> target_stats;
  GainVector gains;
  std::vector<double> train_loss;  // after each round, index 0 = base score only
  std::vector<double> val_loss;
  std::size_t best_iteration = 0;
  std::vector<std::string> warnings;

  // Raw additive score (logit for logistic loss).
  double raw_score(std::span<const double> row) const;
  // Probability for logistic loss, value for squared loss.
  double predict_row(std::span<const double> row) const;
  std::vector<double> predict(const num::Matrix& x) const;
};

struct LabeledData {
  DesignMatrix data;
  std::vector<double> y;
};

GbdtModel fit_gbdt(const LabeledData& train, const LabeledData* val, const GbdtConfig& config);

double logistic_loss(std::span<const double> raw, std::span<const double> y);
double squared_loss(std::span<const double> raw, std::span<const double> y);

// ---------------------------------------------------------------------------

struct ForestConfig {
  std::size_t n_trees = 200;
  std::size_t max_depth = 8;
  double min_leaf = 5;
  double feature_rate = 1.0 / 3.0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

struct ForestModel {
  std::vector<Tree> trees;
  std::vector<std::uint64_t> tree_seeds;
  double feature_rate = 1.0;
  std::vector<ColumnKind> kinds;
  GainVector gains;

  double predict_row(std::span<const double> row) const;
  std::vector<double> predict(const num::Matrix& x) const;
};

// Bootstrap rows per tree, subsample columns per split, average outputs. For
// 0/1 targets the leaf mean is the positive-class fraction.
ForestModel fit_forest(const LabeledData& train, const ForestConfig& config);

// Bootstrap multiplicities drawn for a tree seed (exposed for tests).
std::vector<double> bootstrap_weights(std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// FeatureVector adapters: active slots of `mask`, in slot order.

DesignMatrix design_from_features(std::span<const FeatureVector> rows, const FeatureMask& mask);
std::vector<std::size_t> active_slots(const FeatureMask& mask);

// ---------------------------------------------------------------------------
// Versioned JSON dump (schema in docs/model_formats.md).

std::string to_json(const Tree& tree);
std::string to_json(const GbdtModel& model);
std::string to_json(const ForestModel& model);
GbdtModel gbdt_from_json(std::string_view text);
ForestModel forest_from_json(std::string_view text);

}  // namespace irkit::trees
