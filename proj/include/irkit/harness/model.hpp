#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/harness/metrics.hpp"
#include "irkit/harness/optim.hpp"
#include "irkit/nets.hpp"
#include "irkit/trees.hpp"

namespace irkit::harness {

enum class ModelKind { Linear, Forest, Xgboost, Catboost, Mlp, TabTransformer, TabKanet };

constexpr std::array<ModelKind, 7> kAllModels = {
    ModelKind::Linear, ModelKind::Forest,         ModelKind::Xgboost, ModelKind::Catboost,
    ModelKind::Mlp,    ModelKind::TabTransformer, ModelKind::TabKanet};

// "linear", "forest", "xgboost", "catboost", "mlp", "tabtransformer", "tabkanet"
std::string_view to_string(ModelKind k);
ModelKind parse_model(std::string_view text);
// Table label, e.g. "Logistic Regression" or "Linear Regression" for Linear.
std::string display_name(ModelKind k, Task task);
bool is_network(ModelKind k);
bool is_tree(ModelKind k);

enum class LossKind { CrossEntropy, MeanSquaredError };
std::string_view to_string(LossKind l);

struct TrainConfig {
  Task task = Task::MetsClass;
  ModelKind model = ModelKind::Catboost;
  FeatureMask mask = FeatureMask::full();
  std::uint64_t seed = 2024;

  // Networks. Unset means the task default: AdamW 1e-3 for
  // classification, SGD 1e-4 for regression.
  std::optional<OptimizerConfig> optimizer;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  // Regression networks fit z-scored targets; predictions are mapped back.
  bool standardize_target = true;
  nets::NetConfig net{};

  trees::GbdtConfig gbdt{};
  trees::ForestConfig forest{};

  // Linear / logistic regression.
  double ridge = 1e-6;
  std::size_t linear_max_iter = 200;

  double threshold = 0.5;
  Averaging averaging = Averaging::BinaryPositive;
  TargetOptions target{};

  LossKind loss() const;
  OptimizerConfig effective_optimizer() const;
  // Stable key=value rendering of every field that affects training.
  std::string canonical() const;
};

// Rows prepared for one task: raw-unit features, targets, ids.
struct TaskData {
  std::vector<std::string> ids;
  std::vector<FeatureVector> x;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
};

TaskData prepare(std::span<const ParticipantRecord> records, Task task,
                 const FeatureEncoder& encoder, const TargetOptions& target = {});

// Ordinary least squares or ridge-stabilised logistic regression (IRLS) on
// z-scored numerics and one-hot categoricals.
struct LinearModel {
  bool logistic = false;
  std::vector<double> coef;  // design columns, see LinearModel::design_row
  double intercept = 0.0;
  std::vector<std::size_t> vocab;  // per active categorical slot
  FeatureMask mask = FeatureMask::full();

  std::vector<double> design_row(const FeatureVector& standardized) const;
  double predict(const FeatureVector& standardized) const;
};

struct TrainingHistory {
  std::vector<double> train_loss;  // per epoch (GBDT: per round, IRLS: per iteration)
  std::vector<double> val_loss;
  std::vector<double> val_metric;  // AUC or RMSE
  std::string metric_name;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  std::vector<std::string> warnings;
};

class Model {
 public:
  ModelKind kind = ModelKind::Linear;
  Task task = Task::MetsClass;
  FeatureEncoder encoder;
  std::string fingerprint;
  double target_mean = 0.0;
  double target_scale = 1.0;
  std::variant<LinearModel, trees::ForestModel, trees::GbdtModel,
               std::shared_ptr<const nets::NetModel>>
      impl;

  const FeatureMask& mask() const { return encoder.mask(); }
  bool classification() const { return is_classification(task); }

  // Probability of the positive class, or the regression value.
  std::vector<double> predict(std::span<const FeatureVector> raw) const;
  double predict_one(const FeatureVector& raw) const;
  std::vector<double> predict_records(std::span<const ParticipantRecord> records) const;

  // Bundle directory: manifest.json plus the model artifact.
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);
};

struct TrainResult {
  Model model;
  TrainingHistory history;
};

// Fits `config.model` on `train`; `val` drives early stopping and
// checkpoint selection. Divergence raises NumericFault naming the epoch.
TrainResult train(const TrainConfig& config, const FeatureEncoder& encoder, const TaskData& train,
                  const TaskData& val);

// Up to `n` rows drawn without replacement, in their original order.
std::vector<FeatureVector> sample_rows(std::span<const FeatureVector> rows, std::size_t n,
                                       std::uint64_t seed);

// Attribution background stored next to a bundle as background.json.
void save_background(const std::filesystem::path& dir, std::span<const FeatureVector> rows);
// Empty when the bundle has no background file.
std::vector<FeatureVector> load_background(const std::filesystem::path& dir);

// FNV-1a over every file in a bundle directory (names and bytes, sorted).
std::string bundle_hash(const std::filesystem::path& dir);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string fingerprint(const TrainConfig& config, std::string_view data_manifest);

}  // namespace irkit::harness
