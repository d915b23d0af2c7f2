#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irkit/indices.hpp"

namespace irkit {

enum class Sex { Male, Female };
enum class Race { MexicanAmerican, OtherHispanic, NonHispanicWhite, NonHispanicBlack, OtherMulti };
enum class Source { Nhanes, Charls };

constexpr std::size_t kNumSexes = 2;
constexpr std::size_t kNumRaces = 5;

std::string_view to_string(Sex s);
std::string_view to_string(Race r);
std::string_view to_string(Source s);
std::optional<Sex> parse_sex(std::string_view text);
std::optional<Race> parse_race(std::string_view text);
Source parse_source(std::string_view text);

// One survey participant. Every measured field is optional so that a
// malformed cell can be carried as missing until exclusions run.
struct ParticipantRecord {
  std::string id;
  Source source = Source::Nhanes;
  std::optional<double> age;
  std::optional<Sex> sex;
  std::optional<Race> race;
  std::optional<double> height_cm;
  std::optional<double> weight_kg;
  std::optional<double> bmi;
  std::optional<double> waist_cm;
  std::optional<double> pulse;
  std::optional<double> systolic;
  std::optional<double> diastolic;
  std::optional<double> fpg_mg_dl;
  std::optional<double> insulin_uU_ml;
  std::optional<double> tg_mg_dl;
  std::optional<double> hdl_mg_dl;
  bool diabetes = false;
};

// ---------------------------------------------------------------------------
// Feature layout: seven numeric slots followed by two categorical slots.

enum class Feature : std::size_t {
  Age = 0,
  Bmi,
  Waist,
  Pulse,
  Systolic,
  Diastolic,
  Fpg,
  Sex,
  Race,
};

constexpr std::size_t kNumNumeric = 7;
constexpr std::size_t kNumCategorical = 2;
constexpr std::size_t kNumFeatures = kNumNumeric + kNumCategorical;

constexpr std::size_t slot(Feature f) { return static_cast<std::size_t>(f); }
constexpr bool is_categorical(std::size_t s) { return s >= kNumNumeric; }

std::string_view feature_name(std::size_t slot);
// Accepts the canonical names ("age", "bmi", "waist", ..., "sex", "race").
std::optional<std::size_t> feature_from_name(std::string_view name);

struct FeatureMask {
  std::array<bool, kNumFeatures> active{};

  static FeatureMask full();
  // BMI + fasting glucose only.
  static FeatureMask simplified();
  static FeatureMask from_names(std::span<const std::string> names);

  bool operator[](std::size_t s) const { return active[s]; }
  std::size_t count() const;
  std::vector<std::size_t> numeric_slots() const;
  std::vector<std::size_t> categorical_slots() const;
  std::vector<std::string> names() const;
  bool operator==(const FeatureMask&) const = default;
};

// Model input. Numerics are either raw (measurement units) or z-scored,
// depending on how the vector was produced; categoricals are vocabulary codes.
struct FeatureVector {
  std::array<double, kNumNumeric> numeric{};
  std::array<int, kNumCategorical> categorical{};
  FeatureMask mask = FeatureMask::full();

  double get(std::size_t s) const;
  void set(std::size_t s, double v);
};

// ---------------------------------------------------------------------------
// Tasks and targets.

enum class Task { HomaClass, TygClass, MetsClass, MetsRegress };

constexpr std::array<Task, 4> kAllTasks = {Task::HomaClass, Task::TygClass, Task::MetsClass,
                                           Task::MetsRegress};

std::string_view to_string(Task t);
Task parse_task(std::string_view text);
bool is_classification(Task t);
IndexKind index_kind(Task t);
// Record fields a task's target formula needs.
std::vector<std::string> required_target_fields(Task t);

struct TargetOptions {
  double glucose_mg_per_mmol = kGlucoseMgPerMmol;
};

// Exact index value for the task's surrogate index. Throws DomainError naming
// the first missing formula input.
IndexValue index_of(const ParticipantRecord& r, IndexKind kind, const TargetOptions& opt = {});
// 0/1 label for classification tasks, the METS-IR value for MetsRegress.
double derive_target(const ParticipantRecord& r, Task task, const TargetOptions& opt = {});

// ---------------------------------------------------------------------------
// CSV ingestion.

struct ParseReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t rows_flagged = 0;
  std::size_t cells_flagged = 0;
  std::vector<std::string> warnings;
};

struct ParsedCsv {
  std::vector<ParticipantRecord> records;
  ParseReport report;
};

// Column dictionaries are documented in docs/data_format.md.
std::vector<std::string> mandatory_columns(Source schema);
std::vector<std::string> optional_columns(Source schema);

ParsedCsv parse_csv_text(std::string_view text, Source schema);
ParsedCsv parse_csv(const std::filesystem::path& path, Source schema);
void write_csv(const std::filesystem::path& path, std::span<const ParticipantRecord> records);
std::string to_csv_text(std::span<const ParticipantRecord> records);

// ---------------------------------------------------------------------------
// Exclusions.

struct ExclusionReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  // Reason -> count. Reasons: "age", "diabetes", "missing:<field>".
  std::map<std::string, std::size_t> excluded;

  std::string to_json() const;
};

struct ExclusionResult {
  std::vector<ParticipantRecord> kept;
  ExclusionReport report;
};

// Drops minors, diabetics, and records missing any field required by the
// task target or by an active feature. Each dropped record is tallied under
// the first reason that applies, in that order.
ExclusionResult apply_exclusions(std::span<const ParticipantRecord> records, Task task,
                                 const FeatureMask& mask = FeatureMask::full());

// ---------------------------------------------------------------------------
// Splitting.

enum class Split { Train, Val, Test, External };
std::string_view to_string(Split s);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<Split> splits;  // parallel to ids

  std::size_t count(Split s) const;
  std::map<std::string, Split> as_map() const;
  std::string manifest_csv() const;
};

// Deterministic shuffle under `seed`; the first ceil(train*N) rows go to
// Train, the next round(val*N) to Val, the remainder to Test. CHARLS
// records are always External and do not count toward N. When
// `stratify_labels` is given the rule is applied within each label class.
SplitAssignment split(std::span<const ParticipantRecord> records, std::uint64_t seed,
                      const SplitRatios& ratios = {},
                      std::optional<std::span<const double>> stratify_labels = std::nullopt);

// Sizes produced by the split rule for n internal records.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

// ---------------------------------------------------------------------------
// Encoding.

// Standardisation statistics and categorical vocabularies fitted on Train.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;

  static FeatureEncoder fit(std::span<const ParticipantRecord> train,
                            const FeatureMask& mask = FeatureMask::full());

  // Raw measurement units, categorical codes.
  FeatureVector encode_raw(const ParticipantRecord& r) const;
  // Z-scored numerics, categorical codes.
  FeatureVector encode(const ParticipantRecord& r) const;
  FeatureVector standardize(const FeatureVector& raw) const;
  std::vector<FeatureVector> encode_raw_all(std::span<const ParticipantRecord> rs) const;

  int sex_code(Sex s) const;
  int race_code(Race r) const;
  std::optional<Sex> decode_sex(int code) const;
  std::optional<Race> decode_race(int code) const;
  // Number of distinct codes, including the reserved unknown code.
  std::size_t vocab_size(std::size_t categorical_index) const;

  const FeatureMask& mask() const { return mask_; }
  const std::array<double, kNumNumeric>& means() const { return mean_; }
  const std::array<double, kNumNumeric>& stds() const { return std_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::string to_json() const;
  static FeatureEncoder from_json(std::string_view text);

 private:
  FeatureMask mask_ = FeatureMask::full();
  std::array<double, kNumNumeric> mean_{};
  std::array<double, kNumNumeric> std_{1, 1, 1, 1, 1, 1, 1};
  std::vector<Sex> sex_vocab_;
  std::vector<Race> race_vocab_;
  std::vector<std::string> warnings_;
};

std::optional<double> numeric_field(const ParticipantRecord& r, std::size_t numeric_slot);

}  // namespace irkit
