#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/harness/metrics.hpp"
#include "irkit/harness/model.hpp"

namespace irkit::harness {

// ---------------------------------------------------------------------------
// Group summaries

enum class Grouping { All, Race, Threshold };
std::string_view to_string(Grouping g);

struct CharacteristicRow {
  std::string variable;
  double mean = 0.0;
  double sd = 0.0;      // population sd; 0 for percentage rows
  std::size_t n = 0;    // non-missing values
  bool percent = false;  // mean is a percentage of the group
};

struct GroupStats {
  std::string name;
  std::size_t count = 0;
  std::vector<CharacteristicRow> characteristics;
  std::optional<ClassificationMetrics> cls;
  std::optional<RegressionMetrics> reg;
  std::string note;  // why metrics are absent
};

struct GroupSummary {
  Grouping grouping = Grouping::All;
  std::vector<GroupStats> groups;
  std::vector<std::string> warnings;
};

struct GroupOptions {
  double threshold = 0.5;
  Averaging averaging = Averaging::BinaryPositive;
  TargetOptions target{};
};

// Records must have passed the task's exclusions. `predictions`, when
// non-empty, is parallel to `records` and adds per-group metrics. Empty
// groups are omitted with a warning.
GroupSummary group_summary(std::span<const ParticipantRecord> records, Grouping grouping, Task task,
                           std::span<const double> predictions = {},
                           const GroupOptions& options = {});

// ---------------------------------------------------------------------------
// Experiment configuration (key = value text, documented in README)

struct ExperimentConfig {
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::vector<ModelKind> models{kAllModels.begin(), kAllModels.end()};
  TrainConfig base{};  // task and model are set per cell
  std::optional<OptimizerConfig> classification_optimizer;
  std::optional<OptimizerConfig> regression_optimizer;
  SplitRatios ratios{};
  bool stratify = false;
  std::filesystem::path out_dir = "results";
  bool use_cache = true;
  bool save_models = true;

  std::optional<std::filesystem::path> nhanes_csv;
  std::optional<std::filesystem::path> charls_csv;
  // Synthetic stand-ins used when no CSV is given (0 disables).
  std::size_t synthetic_n = 0;
  std::size_t synthetic_external_n = 0;

  TrainConfig cell(Task task, ModelKind model) const;
};

ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Inverse of parse_experiment_config for the fields it understands.
std::string to_text(const ExperimentConfig& config);

// Parses "adamw:1e-3" / "sgd:1e-4".
OptimizerConfig parse_optimizer_spec(std::string_view text);

struct Datasets {
  std::vector<ParticipantRecord> internal;
  std::vector<ParticipantRecord> external;
  std::vector<std::string> warnings;
};

Datasets load_datasets(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Results

struct SplitMetrics {
  Split split = Split::Test;
  std::size_t n = 0;
  std::string status = "ok";  // "ok", "unavailable: ...", "failed: ..."
  std::optional<ClassificationMetrics> cls;
  std::optional<RegressionMetrics> reg;
};

struct ScatterPoint {
  std::string id;
  double target = 0.0;
  double prediction = 0.0;
};

struct ExperimentResult {
  Task task = Task::MetsClass;
  ModelKind model = ModelKind::Linear;
  std::string fingerprint;
  std::vector<SplitMetrics> splits;  // Val, Test, then External when supplied
  std::vector<RocPoint> roc;         // test split, classification
  std::vector<ScatterPoint> scatter;  // test split, regression
  GroupSummary race_groups;           // test split
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  std::vector<std::string> warnings;
  std::string error;  // set when the cell failed
  double wall_seconds = 0.0;
  bool from_cache = false;

  const SplitMetrics* find(Split s) const;
};

// Metrics of `model` on one prepared split; an undefined metric is reported
// in `status` rather than thrown.
SplitMetrics evaluate_model(const Model& model, const TaskData& d, Split split, double threshold = 0.5,
                            Averaging averaging = Averaging::BinaryPositive,
                            std::vector<double>* preds = nullptr);

// Per-task data preparation shared by every model cell.
struct TaskSplits {
  Task task = Task::MetsClass;
  std::vector<ParticipantRecord> train, val, test, external;
  bool external_supplied = false;
  std::string external_note;  // reason external metrics are unavailable
  ExclusionReport internal_exclusions, external_exclusions;
  SplitAssignment assignment;
  FeatureEncoder encoder;
  std::string data_manifest;  // hashed into fingerprints
};

TaskSplits prepare_task(const ExperimentConfig& config, const Datasets& data, Task task);

// Trains and evaluates one cell, reusing a cached result when allowed.
ExperimentResult run_cell(const ExperimentConfig& config, const TaskSplits& splits, ModelKind model);

struct ExperimentRun {
  std::vector<ExperimentResult> results;
  std::vector<TaskSplits> tasks;
};

// Runs tasks x models, writes metrics.csv, roc_*.csv, scatter_*.csv,
// groups_*.csv, timings.csv, report.md and model bundles under out_dir.
// A failing cell is recorded and the matrix continues.
ExperimentRun run_experiment(const ExperimentConfig& config, const Datasets& data);

std::string metrics_csv(std::span<const ExperimentResult> results);
std::string render_report(const ExperimentConfig& config, const ExperimentRun& run);

}  // namespace irkit::harness
