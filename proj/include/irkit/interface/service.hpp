#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/harness/model.hpp"
#include "json.hpp"

namespace irkit::service {

constexpr int kSchemaVersion = 1;

// Accepted input range per numeric feature, inclusive.
struct InputRange {
  std::string_view feature;
  double min = 0.0;
  double max = 0.0;
  std::string_view unit;
};

std::span<const InputRange> input_ranges();
const InputRange* input_range(std::string_view feature);

// Models sharing one kind and feature mask, at most one per task.
struct ModelSet {
  std::string id;  // "catboost", "catboost-simplified", "mlp-age-bmi"
  harness::ModelKind kind = harness::ModelKind::Catboost;
  FeatureMask mask = FeatureMask::full();
  std::map<Task, std::shared_ptr<const harness::Model>> models;
  std::map<Task, std::vector<FeatureVector>> backgrounds;  // empty when absent
  std::string fingerprint;  // over the member fingerprints
};

std::string set_id(harness::ModelKind kind, const FeatureMask& mask);

struct Registry {
  std::vector<ModelSet> sets;  // sorted by id
  std::string default_id;

  const ModelSet* find(std::string_view id) const;
  void add(harness::Model model, std::vector<FeatureVector> background = {});
  void finalize();  // sorts, fingerprints, picks the default
};

// Loads every bundle directory (containing manifest.json) at `root`, one
// level below it, or below root/models. Throws ConfigError when none exist.
Registry load_registry(const std::filesystem::path& root);

struct ServiceOptions {
  double threshold = 0.5;
  std::size_t max_grid = 200;
  std::size_t default_permutations = 256;
  std::size_t max_permutations = 4096;
  std::uint64_t seed = 2024;
};

struct Reply {
  int status = 200;
  nlohmann::json body;
};

// Stateless request handlers over an immutable registry. Every body carries
// schema_version; 4xx bodies carry a list of {field, message} errors.
class Service {
 public:
  explicit Service(Registry registry, ServiceOptions options = {});

  Reply health() const;
  Reply models() const;
  Reply predict(std::string_view body) const;
  Reply whatif(std::string_view body) const;
  Reply explain(std::string_view body) const;

  // Routes a request; unknown paths give 404, wrong methods 405.
  Reply handle(std::string_view method, std::string_view path, std::string_view body) const;

  const Registry& registry() const { return registry_; }

 private:
  Registry registry_;
  ServiceOptions options_;
};

}  // namespace irkit::service
