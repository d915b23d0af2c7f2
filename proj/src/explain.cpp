#include "irkit/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "irkit/errors.hpp"
#include "irkit/harness/metrics.hpp"
#include "irkit/numcore/rng.hpp"
#include "irkit/trees.hpp"

namespace irkit::explain {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  num::Rng r(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
  return r.next_u64();
}

bool higher_is_better(ImportanceMetric m) {
  return m == ImportanceMetric::Auc || m == ImportanceMetric::Accuracy || m == ImportanceMetric::R2;
}

double evaluate(ImportanceMetric m, std::span<const double> pred, std::span<const double> y,
                double threshold) {
  switch (m) {
    case ImportanceMetric::Auc: return harness::auc(pred, y);
    case ImportanceMetric::Accuracy: return harness::classification_report(pred, y, threshold).acc;
    case ImportanceMetric::R2: return harness::regression_report(pred, y).r2;
    case ImportanceMetric::Rmse: return harness::regression_report(pred, y).rmse;
    case ImportanceMetric::Mae: return harness::regression_report(pred, y).mae;
  }
  return 0.0;
}

void assign_ranks(std::vector<FeatureScore>& fs) {
  std::vector<std::size_t> order(fs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (fs[a].score != fs[b].score) return fs[a].score > fs[b].score;
    if (fs[a].raw_mean != fs[b].raw_mean) return fs[a].raw_mean > fs[b].raw_mean;
    return fs[a].slot < fs[b].slot;
  });
  for (std::size_t r = 0; r < order.size(); ++r) fs[order[r]].rank = r + 1;
}

double mean_sd_error(const std::vector<double>& v, double* mean_out) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  *mean_out = mean;
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace

std::string_view to_string(Units u) { return u == Units::Logit ? "logit" : "probability"; }

PredictFn model_function(const harness::Model& model, Units units) {
  const bool logit = units == Units::Logit && model.classification();
  return [&model, logit](std::span<const FeatureVector> rows) {
    std::vector<double> p = model.predict(rows);
    if (logit) {
      for (double& v : p) {
        const double q = std::clamp(v, 1e-12, 1.0 - 1e-12);
        v = std::log(q / (1.0 - q));
      }
    }
    return p;
  };
}

std::string_view to_string(ImportanceMethod m) {
  switch (m) {
    case ImportanceMethod::Permutation: return "permutation";
    case ImportanceMethod::Gain: return "gain";
    case ImportanceMethod::MeanAbsShap: return "mean_abs_shap";
  }
  return "?";
}

std::string_view to_string(ImportanceMetric m) {
  switch (m) {
    case ImportanceMetric::Auc: return "auc";
    case ImportanceMetric::Accuracy: return "acc";
    case ImportanceMetric::R2: return "r2";
    case ImportanceMetric::Rmse: return "rmse";
    case ImportanceMetric::Mae: return "mae";
  }
  return "?";
}

ImportanceMetric parse_importance_metric(std::string_view text) {
  for (auto m : {ImportanceMetric::Auc, ImportanceMetric::Accuracy, ImportanceMetric::R2,
                 ImportanceMetric::Rmse, ImportanceMetric::Mae}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown importance metric '" + std::string(text) +
                    "' (expected auc, acc, r2, rmse or mae)");
}

ImportanceMetric default_metric(Task task) {
  return is_classification(task) ? ImportanceMetric::Auc : ImportanceMetric::Rmse;
}

std::vector<FeatureScore> ImportanceReport::ranked() const {
  std::vector<FeatureScore> out = features;
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
  return out;
}

// ---------------------------------------------------------------------------

ImportanceReport permutation_importance(const PredictFn& f, std::span<const FeatureVector> x,
                                        std::span<const double> y, const FeatureMask& mask,
                                        ImportanceMetric metric, const PermutationOptions& options) {
  if (options.repeats == 0) throw ConfigError("permutation_importance: repeats must be >= 1");
  if (x.size() != y.size()) throw ShapeError("permutation_importance: rows and targets differ in length");
  if (x.empty()) throw UndefinedMetric("permutation_importance: no rows");

  ImportanceReport rep;
  rep.method = ImportanceMethod::Permutation;
  rep.metric = std::string(to_string(metric));
  rep.repeats = options.repeats;
  rep.baseline = evaluate(metric, f(x), y, options.threshold);
  const double sign = higher_is_better(metric) ? 1.0 : -1.0;

  num::Rng master(options.seed);
  std::vector<FeatureVector> work(x.begin(), x.end());
  std::vector<std::size_t> perm(x.size());
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (!mask[s]) continue;
    num::Rng rng(master.fork_seed());
    std::vector<double> drops;
    for (std::size_t r = 0; r < options.repeats; ++r) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(std::span<std::size_t>(perm));
      for (std::size_t i = 0; i < x.size(); ++i) work[i].set(s, x[perm[i]].get(s));
      const double m = evaluate(metric, f(work), y, options.threshold);
      drops.push_back(sign * (rep.baseline - m));
    }
    for (std::size_t i = 0; i < x.size(); ++i) work[i].set(s, x[i].get(s));

    FeatureScore fs;
    fs.slot = s;
    fs.feature = std::string(feature_name(s));
    fs.stderr_ = mean_sd_error(drops, &fs.raw_mean);
    fs.score = std::max(0.0, fs.raw_mean);
    rep.features.push_back(fs);
  }
  assign_ranks(rep.features);
  return rep;
}

ImportanceReport permutation_importance(const harness::Model& model, const harness::TaskData& data,
                                        ImportanceMetric metric, const PermutationOptions& options) {
  return permutation_importance(model_function(model), data.x, data.y, model.mask(), metric, options);
}

ImportanceReport gain_importance(const harness::Model& model) {
  const trees::GainVector* gains = nullptr;
  if (const auto* g = std::get_if<trees::GbdtModel>(&model.impl)) gains = &g->gains;
  if (const auto* fm = std::get_if<trees::ForestModel>(&model.impl)) gains = &fm->gains;
  if (gains == nullptr) {
    throw Unsupported("gain importance needs a forest or GBDT model, got " +
                      std::string(harness::to_string(model.kind)));
  }
  const auto slots = trees::active_slots(model.mask());
  if (gains->size() != slots.size()) throw ShapeError("gain_importance: gain vector does not match mask");

  ImportanceReport rep;
  rep.method = ImportanceMethod::Gain;
  double total = 0.0;
  for (double g : *gains) total += g;
  for (std::size_t j = 0; j < slots.size(); ++j) {
    FeatureScore fs;
    fs.slot = slots[j];
    fs.feature = std::string(feature_name(slots[j]));
    fs.score = total > 0.0 ? (*gains)[j] / total : 0.0;
    fs.raw_mean = fs.score;
    rep.features.push_back(fs);
  }
  if (total <= 0.0) rep.note = "model has no splits; all gains are zero";
  assign_ranks(rep.features);
  return rep;
}

// ---------------------------------------------------------------------------

Attribution shapley_sampling(const PredictFn& f, std::span<const FeatureVector> background,
                             double base_value, const FeatureVector& instance,
                             const FeatureMask& mask, const ShapleyOptions& options) {
  if (background.empty()) throw ConfigError("shapley_sampling: background is empty");
  if (options.n_permutations == 0) throw ConfigError("shapley_sampling: n_permutations must be >= 1");

  std::vector<std::size_t> active;
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (mask[s]) active.push_back(s);
  }
  const std::size_t d = active.size();

  Attribution a;
  a.mask = mask;
  a.n_permutations = options.n_permutations;
  a.base_value = base_value;
  a.prediction = f(std::span<const FeatureVector>(&instance, 1)).at(0);

  // contrib[k * d + j]: contribution of active[j] in permutation k
  const std::size_t n = options.n_permutations;
  std::vector<double> contrib(n * d, 0.0);
  std::vector<double> totals(n, 0.0);

  num::Rng rng(options.seed);
  // Background rows are drawn without replacement, reshuffled every full pass.
  const std::size_t nb = background.size();
  std::vector<std::size_t> bperm(nb);
  std::size_t bpos = 0;
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  std::vector<FeatureVector> rows;
  std::vector<std::size_t> order(d);
  std::vector<std::vector<std::size_t>> orders;
  for (std::size_t k0 = 0; k0 < n; k0 += chunk) {
    const std::size_t kn = std::min(chunk, n - k0);
    rows.clear();
    orders.clear();
    for (std::size_t k = 0; k < kn; ++k) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span<std::size_t>(order));
      if (bpos == 0) {
        std::iota(bperm.begin(), bperm.end(), 0);
        rng.shuffle(std::span<std::size_t>(bperm));
      }
      FeatureVector z = background[bperm[bpos]];
      bpos = (bpos + 1) % nb;
      for (std::size_t s = 0; s < kNumFeatures; ++s) {
        if (!mask[s]) z.set(s, instance.get(s));
      }
      z.mask = instance.mask;
      rows.push_back(z);
      for (std::size_t j : order) {
        z.set(active[j], instance.get(active[j]));
        rows.push_back(z);
      }
      orders.push_back(order);
    }
    const std::vector<double> out = f(rows);
    if (out.size() != rows.size()) throw ShapeError("shapley_sampling: model returned wrong row count");
    for (std::size_t k = 0; k < kn; ++k) {
      const double* v = out.data() + k * (d + 1);
      for (std::size_t step = 0; step < d; ++step) {
        contrib[(k0 + k) * d + orders[k][step]] = v[step + 1] - v[step];
      }
      totals[k0 + k] = v[d] - v[0];
    }
  }

  std::vector<double> col(n);
  double phi_sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < n; ++k) col[k] = contrib[k * d + j];
    double mean = 0.0;
    a.stderr_[active[j]] = mean_sd_error(col, &mean);
    a.phi[active[j]] = mean;
    phi_sum += mean;
  }
  // The gap is base minus the mean prediction over the drawn rows. Complete
  // passes reproduce the base exactly; only the r leftover draws vary, with
  // the finite-population variance r (N - r) / (N - 1) * sd^2 / n^2.
  double mean_total = 0.0;
  const double naive = mean_sd_error(totals, &mean_total);
  const double r = static_cast<double>(n % nb);
  const double fpc = nb > 1 ? std::sqrt(r * (static_cast<double>(nb) - r) /
                                        (static_cast<double>(nb) - 1.0) / static_cast<double>(n))
                            : 0.0;
  a.efficiency_gap = phi_sum - (a.prediction - a.base_value);
  double scale = std::abs(a.prediction) + std::abs(a.base_value);
  for (double p : a.phi) scale += std::abs(p);
  a.efficiency_stderr = std::max(naive * fpc, 64.0 * std::numeric_limits<double>::epsilon() * scale);
  return a;
}

Attribution shapley_sampling(const PredictFn& f, std::span<const FeatureVector> background,
                             const FeatureVector& instance, const FeatureMask& mask,
                             const ShapleyOptions& options) {
  if (background.empty()) throw ConfigError("shapley_sampling: background is empty");
  const std::vector<double> bg = f(background);
  const double base = std::accumulate(bg.begin(), bg.end(), 0.0) / static_cast<double>(bg.size());
  return shapley_sampling(f, background, base, instance, mask, options);
}

std::vector<Attribution> shapley_many(const PredictFn& f, std::span<const FeatureVector> background,
                                      std::span<const FeatureVector> instances,
                                      std::span<const std::string> ids, const FeatureMask& mask,
                                      const ShapleyOptions& options) {
  if (!ids.empty() && ids.size() != instances.size()) {
    throw ShapeError("shapley_many: ids and instances differ in length");
  }
  if (background.empty()) throw ConfigError("shapley_sampling: background is empty");
  const std::vector<double> bg = f(background);
  const double base = std::accumulate(bg.begin(), bg.end(), 0.0) / static_cast<double>(bg.size());
  std::vector<Attribution> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    ShapleyOptions opt = options;
    opt.seed = mix_seed(options.seed, i);
    out.push_back(shapley_sampling(f, background, base, instances[i], mask, opt));
    out.back().instance_id = ids.empty() ? std::to_string(i) : ids[i];
  }
  return out;
}

std::vector<FeatureVector> sample_background(std::span<const FeatureVector> rows, std::size_t n,
                                             std::uint64_t seed) {
  return harness::sample_rows(rows, n, seed);
}

ImportanceReport shap_importance(std::span<const Attribution> attributions) {
  if (attributions.empty()) throw UndefinedMetric("shap_importance: no attributions");
  const FeatureMask& mask = attributions.front().mask;
  ImportanceReport rep;
  rep.method = ImportanceMethod::MeanAbsShap;
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (!mask[s]) continue;
    std::vector<double> v;
    for (const Attribution& a : attributions) {
      if (!(a.mask == mask)) throw ShapeError("shap_importance: attributions use different masks");
      v.push_back(std::abs(a.phi[s]));
    }
    FeatureScore fs;
    fs.slot = s;
    fs.feature = std::string(feature_name(s));
    fs.stderr_ = mean_sd_error(v, &fs.score);
    fs.raw_mean = fs.score;
    rep.features.push_back(fs);
  }
  assign_ranks(rep.features);
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<DependencePoint> dependence_export(std::span<const Attribution> attributions,
                                               std::span<const FeatureVector> instances,
                                               std::string_view feature) {
  const auto slot = feature_from_name(feature);
  if (!slot) throw ConfigError("unknown feature '" + std::string(feature) + "'");
  if (attributions.size() != instances.size()) {
    throw ShapeError("dependence_export: attributions and instances differ in length");
  }
  std::vector<DependencePoint> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!attributions[i].mask[*slot]) {
      throw ConfigError("feature '" + std::string(feature) + "' is not used by the model");
    }
    out.push_back({attributions[i].instance_id, instances[i].get(*slot), attributions[i].phi[*slot]});
  }
  return out;
}

std::string importance_csv(const ImportanceReport& report) {
  std::string out = "feature,score,stderr,rank,method\n";
  for (const FeatureScore& fs : report.ranked()) {
    out += fs.feature + "," + fmt(fs.score) + "," + fmt(fs.stderr_) + "," + std::to_string(fs.rank) +
           "," + std::string(to_string(report.method)) + "\n";
  }
  return out;
}

std::string shap_csv(std::span<const Attribution> attributions) {
  const FeatureMask mask = attributions.empty() ? FeatureMask::full() : attributions.front().mask;
  std::string out = "id,units,base_value,prediction";
  for (const auto& name : mask.names()) out += "," + name;
  for (const auto& name : mask.names()) out += ",se_" + name;
  out += ",efficiency_gap,efficiency_stderr\n";
  for (const Attribution& a : attributions) {
    out += a.instance_id + "," + std::string(to_string(a.units)) + "," + fmt(a.base_value) + "," +
           fmt(a.prediction);
    for (std::size_t s = 0; s < kNumFeatures; ++s) {
      if (mask[s]) out += "," + fmt(a.phi[s]);
    }
    for (std::size_t s = 0; s < kNumFeatures; ++s) {
      if (mask[s]) out += "," + fmt(a.stderr_[s]);
    }
    out += "," + fmt(a.efficiency_gap) + "," + fmt(a.efficiency_stderr) + "\n";
  }
  return out;
}

std::string dependence_csv(std::span<const DependencePoint> points) {
  std::string out = "id,value,shap\n";
  for (const DependencePoint& p : points) out += p.instance_id + "," + fmt(p.value) + "," + fmt(p.shap) + "\n";
  return out;
}

}  // namespace irkit::explain
