#include "irkit/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "irkit/errors.hpp"
#include "irkit/synthetic.hpp"
#include "json.hpp"

namespace irkit::harness {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON for cached results

void to_json(json& j, const Confusion& c) {
  j = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}
void from_json(const json& j, Confusion& c) {
  c.tp = j.at("tp");
  c.fp = j.at("fp");
  c.tn = j.at("tn");
  c.fn = j.at("fn");
}
void to_json(json& j, const ClassificationMetrics& m) {
  j = {{"auc", m.auc},       {"acc", m.acc},       {"f1", m.f1},
       {"precision", m.precision}, {"recall", m.recall}, {"confusion", m.confusion},
       {"averaging", to_string(m.averaging)}, {"undefined", m.undefined}};
}
void from_json(const json& j, ClassificationMetrics& m) {
  m.auc = j.at("auc");
  m.acc = j.at("acc");
  m.f1 = j.at("f1");
  m.precision = j.at("precision");
  m.recall = j.at("recall");
  m.confusion = j.at("confusion");
  m.averaging = parse_averaging(j.at("averaging").get<std::string>());
  m.undefined = j.at("undefined").get<std::vector<std::string>>();
}
void to_json(json& j, const RegressionMetrics& m) {
  j = {{"mae", m.mae}, {"rmse", m.rmse}, {"r2", m.r2}};
}
void from_json(const json& j, RegressionMetrics& m) {
  m.mae = j.at("mae");
  m.rmse = j.at("rmse");
  m.r2 = j.at("r2");
}

namespace {

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}
template <class T>
std::optional<T> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json group_json(const GroupSummary& g) {
  json groups = json::array();
  for (const auto& s : g.groups) {
    json rows = json::array();
    for (const auto& c : s.characteristics) {
      rows.push_back({{"variable", c.variable}, {"mean", c.mean}, {"sd", c.sd}, {"n", c.n},
                      {"percent", c.percent}});
    }
    groups.push_back({{"name", s.name},
                      {"count", s.count},
                      {"characteristics", rows},
                      {"cls", opt_json(s.cls)},
                      {"reg", opt_json(s.reg)},
                      {"note", s.note}});
  }
  return {{"grouping", to_string(g.grouping)}, {"groups", groups}, {"warnings", g.warnings}};
}

Grouping parse_grouping(std::string_view s) {
  if (s == "race") return Grouping::Race;
  if (s == "threshold") return Grouping::Threshold;
  return Grouping::All;
}

GroupSummary group_from_json(const json& j) {
  GroupSummary g;
  g.grouping = parse_grouping(j.at("grouping").get<std::string>());
  g.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const auto& s : j.at("groups")) {
    GroupStats st;
    st.name = s.at("name");
    st.count = s.at("count");
    for (const auto& c : s.at("characteristics")) {
      st.characteristics.push_back(
          {c.at("variable"), c.at("mean"), c.at("sd"), c.at("n"), c.at("percent")});
    }
    st.cls = opt_from<ClassificationMetrics>(s, "cls");
    st.reg = opt_from<RegressionMetrics>(s, "reg");
    st.note = s.at("note");
    g.groups.push_back(std::move(st));
  }
  return g;
}

Split parse_split(std::string_view s) {
  for (Split v : {Split::Train, Split::Val, Split::Test, Split::External}) {
    if (to_string(v) == s) return v;
  }
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

json result_json(const ExperimentResult& r) {
  json splits = json::array();
  for (const auto& s : r.splits) {
    splits.push_back({{"split", to_string(s.split)},
                      {"n", s.n},
                      {"status", s.status},
                      {"cls", opt_json(s.cls)},
                      {"reg", opt_json(s.reg)}});
  }
  json roc = json::array();
  for (const auto& p : r.roc) {
    roc.push_back({p.fpr, p.tpr, std::isinf(p.threshold) ? json(nullptr) : json(p.threshold)});
  }
  json scatter = json::array();
  for (const auto& p : r.scatter) scatter.push_back({p.id, p.target, p.prediction});
  return {{"format", "irkit.result"},
          {"version", 1},
          {"task", to_string(r.task)},
          {"model", to_string(r.model)},
          {"fingerprint", r.fingerprint},
          {"splits", splits},
          {"roc", roc},
          {"scatter", scatter},
          {"race_groups", group_json(r.race_groups)},
          {"epochs", r.epochs},
          {"best_epoch", r.best_epoch},
          {"warnings", r.warnings},
          {"error", r.error},
          {"wall_seconds", r.wall_seconds}};
}

ExperimentResult result_from_json(const json& j) {
  ExperimentResult r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.model = parse_model(j.at("model").get<std::string>());
  r.fingerprint = j.at("fingerprint");
  for (const auto& s : j.at("splits")) {
    SplitMetrics m;
    m.split = parse_split(s.at("split").get<std::string>());
    m.n = s.at("n");
    m.status = s.at("status");
    m.cls = opt_from<ClassificationMetrics>(s, "cls");
    m.reg = opt_from<RegressionMetrics>(s, "reg");
    r.splits.push_back(std::move(m));
  }
  for (const auto& p : j.at("roc")) {
    r.roc.push_back({p[0].get<double>(), p[1].get<double>(),
                     p[2].is_null() ? std::numeric_limits<double>::infinity() : p[2].get<double>()});
  }
  for (const auto& p : j.at("scatter")) {
    r.scatter.push_back({p[0].get<std::string>(), p[1].get<double>(), p[2].get<double>()});
  }
  r.race_groups = group_from_json(j.at("race_groups"));
  r.epochs = j.at("epochs");
  r.best_epoch = j.at("best_epoch");
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.error = j.at("error");
  r.wall_seconds = j.at("wall_seconds");
  return r;
}

// ---------------------------------------------------------------------------

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + p.string());
  out << text;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto part = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!part.empty()) out.push_back(part);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
  return d;
}

std::size_t to_size(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  }
  return std::stoull(v);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

FeatureMask parse_mask(const std::string& v) {
  if (v == "full") return FeatureMask::full();
  if (v == "simplified") return FeatureMask::simplified();
  return FeatureMask::from_names(split_list(v));
}

std::string mask_text(const FeatureMask& m) {
  if (m == FeatureMask::full()) return "full";
  if (m == FeatureMask::simplified()) return "simplified";
  std::string s;
  for (const auto& n : m.names()) s += (s.empty() ? "" : ",") + n;
  return s;
}

// Shortest of %.15g / %.17g that reads back exactly.
std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string optimizer_text(const OptimizerConfig& o) {
  return std::string(to_string(o.kind)) + ":" + g17(o.lr) + ":" + g17(o.weight_decay);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    t["tasks"] = [](ExperimentConfig& c, const std::string& v) {
      c.tasks.clear();
      for (const auto& s : split_list(v)) c.tasks.push_back(parse_task(s));
    };
    t["models"] = [](ExperimentConfig& c, const std::string& v) {
      c.models.clear();
      for (const auto& s : split_list(v)) c.models.push_back(parse_model(s));
    };
    t["seed"] = [](ExperimentConfig& c, const std::string& v) { c.base.seed = to_size(v); };
    t["mask"] = [](ExperimentConfig& c, const std::string& v) { c.base.mask = parse_mask(v); };
    t["ratios"] = [](ExperimentConfig& c, const std::string& v) {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError("ratios needs three values");
      c.ratios = {to_double(parts[0]), to_double(parts[1]), to_double(parts[2])};
    };
    t["stratify"] = [](ExperimentConfig& c, const std::string& v) { c.stratify = to_bool(v); };
    t["out_dir"] = [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; };
    t["cache"] = [](ExperimentConfig& c, const std::string& v) { c.use_cache = to_bool(v); };
    t["save_models"] = [](ExperimentConfig& c, const std::string& v) { c.save_models = to_bool(v); };
    t["nhanes"] = [](ExperimentConfig& c, const std::string& v) { c.nhanes_csv = v; };
    t["charls"] = [](ExperimentConfig& c, const std::string& v) { c.charls_csv = v; };
    t["synthetic_n"] = [](ExperimentConfig& c, const std::string& v) { c.synthetic_n = to_size(v); };
    t["synthetic_external_n"] = [](ExperimentConfig& c, const std::string& v) {
      c.synthetic_external_n = to_size(v);
    };
    t["optimizer.classification"] = [](ExperimentConfig& c, const std::string& v) {
      c.classification_optimizer = parse_optimizer_spec(v);
    };
    t["optimizer.regression"] = [](ExperimentConfig& c, const std::string& v) {
      c.regression_optimizer = parse_optimizer_spec(v);
    };
    t["batch_size"] = [](ExperimentConfig& c, const std::string& v) { c.base.batch_size = to_size(v); };
    t["max_epochs"] = [](ExperimentConfig& c, const std::string& v) { c.base.max_epochs = to_size(v); };
    t["patience"] = [](ExperimentConfig& c, const std::string& v) { c.base.patience = to_size(v); };
    t["standardize_target"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.standardize_target = to_bool(v);
    };
    t["threshold"] = [](ExperimentConfig& c, const std::string& v) { c.base.threshold = to_double(v); };
    t["averaging"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.averaging = parse_averaging(v);
    };
    t["ridge"] = [](ExperimentConfig& c, const std::string& v) { c.base.ridge = to_double(v); };
    t["linear_max_iter"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.linear_max_iter = to_size(v);
    };
    t["glucose_mg_per_mmol"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.target.glucose_mg_per_mmol = to_double(v);
    };
    t["net.dim"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.dim = to_size(v); };
    t["net.heads"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.heads = to_size(v); };
    t["net.layers"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.layers = to_size(v); };
    t["net.ffn_mult"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.ffn_mult = to_size(v); };
    t["net.hidden"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.hidden = to_size(v); };
    t["net.mlp_embed_dim"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.net.mlp_embed_dim = to_size(v);
    };
    t["net.dropout"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.dropout = to_double(v); };
    t["net.grid_size"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.grid.size = to_size(v); };
    t["net.grid_order"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.grid.order = to_size(v); };
    t["net.grid_lo"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.grid.lo = to_double(v); };
    t["net.grid_hi"] = [](ExperimentConfig& c, const std::string& v) { c.base.net.grid.hi = to_double(v); };
    t["gbdt.n_trees"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.n_trees = to_size(v); };
    t["gbdt.max_depth"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.max_depth = to_size(v); };
    t["gbdt.learning_rate"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.gbdt.learning_rate = to_double(v);
    };
    t["gbdt.lambda"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.lambda = to_double(v); };
    t["gbdt.min_leaf"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.min_leaf = to_double(v); };
    t["gbdt.early_stop"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.early_stop = to_bool(v); };
    t["gbdt.patience"] = [](ExperimentConfig& c, const std::string& v) { c.base.gbdt.patience = to_size(v); };
    t["gbdt.histogram_bins"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.gbdt.histogram_bins = to_size(v);
    };
    t["forest.n_trees"] = [](ExperimentConfig& c, const std::string& v) { c.base.forest.n_trees = to_size(v); };
    t["forest.max_depth"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.forest.max_depth = to_size(v);
    };
    t["forest.min_leaf"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.forest.min_leaf = to_double(v);
    };
    t["forest.feature_rate"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.forest.feature_rate = to_double(v);
    };
    t["forest.bootstrap"] = [](ExperimentConfig& c, const std::string& v) {
      c.base.forest.bootstrap = to_bool(v);
    };
    return t;
  }();
  return table;
}

// ---------------------------------------------------------------------------
// Characteristics

std::vector<CharacteristicRow> characteristics(std::span<const ParticipantRecord* const> rs,
                                               Task task, const TargetOptions& target) {
  using Getter = std::function<std::optional<double>(const ParticipantRecord&)>;
  const IndexKind kind = index_kind(task);
  const std::vector<std::pair<std::string, Getter>> vars = {
      {"age", [](const auto& r) { return r.age; }},
      {"bmi", [](const auto& r) { return r.bmi; }},
      {"waist", [](const auto& r) { return r.waist_cm; }},
      {"pulse", [](const auto& r) { return r.pulse; }},
      {"systolic", [](const auto& r) { return r.systolic; }},
      {"diastolic", [](const auto& r) { return r.diastolic; }},
      {"fpg", [](const auto& r) { return r.fpg_mg_dl; }},
      {"insulin", [](const auto& r) { return r.insulin_uU_ml; }},
      {"tg", [](const auto& r) { return r.tg_mg_dl; }},
      {"hdl", [](const auto& r) { return r.hdl_mg_dl; }},
      {std::string(to_string(kind)),
       [&](const auto& r) -> std::optional<double> {
         try {
           return index_of(r, kind, target).value;
         } catch (const DomainError&) {
           return std::nullopt;
         }
       }},
  };
  std::vector<CharacteristicRow> rows;
  for (const auto& [name, get] : vars) {
    CharacteristicRow row{name};
    double sum = 0.0, sq = 0.0;
    for (const auto* r : rs) {
      if (auto v = get(*r)) {
        sum += *v;
        ++row.n;
      }
    }
    if (row.n == 0) continue;
    row.mean = sum / static_cast<double>(row.n);
    for (const auto* r : rs) {
      if (auto v = get(*r)) sq += (*v - row.mean) * (*v - row.mean);
    }
    row.sd = std::sqrt(sq / static_cast<double>(row.n));
    rows.push_back(row);
  }
  auto share = [&](const std::string& name, auto pred) {
    std::size_t k = 0;
    for (const auto* r : rs) k += pred(*r);
    rows.push_back({name, 100.0 * static_cast<double>(k) / static_cast<double>(rs.size()), 0.0,
                    rs.size(), true});
  };
  share("male", [](const ParticipantRecord& r) { return r.sex == Sex::Male; });
  for (std::size_t i = 0; i < kNumRaces; ++i) {
    const Race race = static_cast<Race>(i);
    share(std::string(to_string(race)), [race](const ParticipantRecord& r) { return r.race == race; });
  }
  return rows;
}

void add_metrics(GroupStats& g, Task task, std::span<const double> preds, std::span<const double> ys,
                 const GroupOptions& opt) {
  try {
    if (is_classification(task)) {
      g.cls = classification_report(preds, ys, opt.threshold, opt.averaging);
    } else {
      g.reg = regression_report(preds, ys);
    }
  } catch (const UndefinedMetric& e) {
    g.note = e.what();
  }
}

SplitMetrics evaluate(const Model& model, const TaskData& d, Split split, const TrainConfig& cfg,
                      std::vector<double>* preds_out) {
  return evaluate_model(model, d, split, cfg.threshold, cfg.averaging, preds_out);
}

std::string cell_name(Task t, ModelKind m) {
  return std::string(to_string(t)) + "_" + std::string(to_string(m));
}

}  // namespace

// ---------------------------------------------------------------------------

SplitMetrics evaluate_model(const Model& model, const TaskData& d, Split split, double threshold,
                            Averaging averaging, std::vector<double>* preds_out) {
  SplitMetrics m;
  m.split = split;
  m.n = d.size();
  if (d.size() == 0) {
    m.status = "unavailable: no records";
    return m;
  }
  const auto preds = model.predict(d.x);
  if (preds_out) *preds_out = preds;
  try {
    if (is_classification(model.task)) {
      m.cls = classification_report(preds, d.y, threshold, averaging);
    } else {
      m.reg = regression_report(preds, d.y);
    }
  } catch (const UndefinedMetric& e) {
    m.status = std::string("undefined: ") + e.what();
  }
  return m;
}


std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::All: return "all";
    case Grouping::Race: return "race";
    case Grouping::Threshold: return "threshold";
  }
  return "?";
}

GroupSummary group_summary(std::span<const ParticipantRecord> records, Grouping grouping, Task task,
                           std::span<const double> predictions, const GroupOptions& options) {
  if (!predictions.empty() && predictions.size() != records.size()) {
    throw ShapeError("group_summary: predictions must parallel records");
  }
  GroupSummary out;
  out.grouping = grouping;
  std::vector<std::string> names;
  std::vector<int> member(records.size(), -1);
  if (grouping == Grouping::All) {
    names = {"all"};
    std::fill(member.begin(), member.end(), 0);
  } else if (grouping == Grouping::Race) {
    for (std::size_t i = 0; i < kNumRaces; ++i) names.emplace_back(to_string(static_cast<Race>(i)));
    std::size_t unknown = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].race) member[i] = static_cast<int>(*records[i].race);
      else ++unknown;
    }
    if (unknown > 0) out.warnings.push_back(std::to_string(unknown) + " records without race skipped");
  } else {
    const IndexKind kind = index_kind(task);
    const std::string thr = num(threshold(kind), 2);
    names = {std::string(to_string(kind)) + " <= " + thr, std::string(to_string(kind)) + " > " + thr};
    for (std::size_t i = 0; i < records.size(); ++i) {
      member[i] = classify(index_of(records[i], kind, options.target)).positive ? 1 : 0;
    }
  }
  for (std::size_t g = 0; g < names.size(); ++g) {
    std::vector<const ParticipantRecord*> rs;
    std::vector<double> preds, ys;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (member[i] != static_cast<int>(g)) continue;
      rs.push_back(&records[i]);
      if (!predictions.empty()) {
        preds.push_back(predictions[i]);
        ys.push_back(derive_target(records[i], task, options.target));
      }
    }
    if (rs.empty()) {
      out.warnings.push_back("group '" + names[g] + "' is empty; omitted");
      continue;
    }
    GroupStats st;
    st.name = names[g];
    st.count = rs.size();
    st.characteristics = characteristics(rs, task, options.target);
    if (!predictions.empty()) add_metrics(st, task, preds, ys, options);
    out.groups.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------

OptimizerConfig parse_optimizer_spec(std::string_view text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(trim(text.substr(start, colon == std::string_view::npos ? text.npos : colon - start)));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts.empty() || parts.size() > 3) {
    throw ConfigError("optimizer spec '" + std::string(text) + "' (expected kind[:lr[:weight_decay]])");
  }
  OptimizerConfig o;
  o.kind = parse_optimizer(parts[0]);
  if (o.kind == OptimizerKind::Sgd) {
    o.lr = 1e-4;
    o.weight_decay = 0.0;
  }
  if (parts.size() > 1) o.lr = to_double(parts[1]);
  if (parts.size() > 2) o.weight_decay = to_double(parts[2]);
  if (!(o.lr > 0.0)) throw ConfigError("learning rate must be positive");
  return o;
}

TrainConfig ExperimentConfig::cell(Task task, ModelKind model) const {
  TrainConfig c = base;
  c.task = task;
  c.model = model;
  const auto& o = is_classification(task) ? classification_optimizer : regression_optimizer;
  if (o) c.optimizer = *o;
  return c;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(c, value);
    } catch (const std::exception& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  if (c.tasks.empty()) throw ConfigError("config: no tasks");
  if (c.models.empty()) throw ConfigError("config: no models");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  ExperimentConfig c = parse_experiment_config(read_text(path));
  const auto dir = path.parent_path();
  auto rebase = [&](std::filesystem::path& p) {
    if (p.is_relative() && !dir.empty()) p = dir / p;
  };
  if (c.nhanes_csv) rebase(*c.nhanes_csv);
  if (c.charls_csv) rebase(*c.charls_csv);
  return c;
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream s;
  auto kv = [&](std::string_view k, const std::string& v) { s << k << " = " << v << '\n'; };
  std::string tasks, models;
  for (Task t : c.tasks) tasks += (tasks.empty() ? "" : ",") + std::string(to_string(t));
  for (ModelKind m : c.models) models += (models.empty() ? "" : ",") + std::string(to_string(m));
  const TrainConfig& b = c.base;
  kv("tasks", tasks);
  kv("models", models);
  kv("seed", std::to_string(b.seed));
  kv("mask", mask_text(b.mask));
  kv("ratios", g17(c.ratios.train) + "," + g17(c.ratios.val) + "," + g17(c.ratios.test));
  kv("stratify", c.stratify ? "true" : "false");
  kv("out_dir", c.out_dir.string());
  kv("cache", c.use_cache ? "true" : "false");
  kv("save_models", c.save_models ? "true" : "false");
  if (c.nhanes_csv) kv("nhanes", c.nhanes_csv->string());
  if (c.charls_csv) kv("charls", c.charls_csv->string());
  kv("synthetic_n", std::to_string(c.synthetic_n));
  kv("synthetic_external_n", std::to_string(c.synthetic_external_n));
  if (c.classification_optimizer) kv("optimizer.classification", optimizer_text(*c.classification_optimizer));
  if (c.regression_optimizer) kv("optimizer.regression", optimizer_text(*c.regression_optimizer));
  kv("batch_size", std::to_string(b.batch_size));
  kv("max_epochs", std::to_string(b.max_epochs));
  kv("patience", std::to_string(b.patience));
  kv("standardize_target", b.standardize_target ? "true" : "false");
  kv("threshold", g17(b.threshold));
  kv("averaging", std::string(to_string(b.averaging)));
  kv("ridge", g17(b.ridge));
  kv("linear_max_iter", std::to_string(b.linear_max_iter));
  kv("glucose_mg_per_mmol", g17(b.target.glucose_mg_per_mmol));
  kv("net.dim", std::to_string(b.net.dim));
  kv("net.heads", std::to_string(b.net.heads));
  kv("net.layers", std::to_string(b.net.layers));
  kv("net.ffn_mult", std::to_string(b.net.ffn_mult));
  kv("net.hidden", std::to_string(b.net.hidden));
  kv("net.mlp_embed_dim", std::to_string(b.net.mlp_embed_dim));
  kv("net.dropout", g17(b.net.dropout));
  kv("net.grid_size", std::to_string(b.net.grid.size));
  kv("net.grid_order", std::to_string(b.net.grid.order));
  kv("net.grid_lo", g17(b.net.grid.lo));
  kv("net.grid_hi", g17(b.net.grid.hi));
  kv("gbdt.n_trees", std::to_string(b.gbdt.n_trees));
  kv("gbdt.max_depth", std::to_string(b.gbdt.max_depth));
  kv("gbdt.learning_rate", g17(b.gbdt.learning_rate));
  kv("gbdt.lambda", g17(b.gbdt.lambda));
  kv("gbdt.min_leaf", g17(b.gbdt.min_leaf));
  kv("gbdt.early_stop", b.gbdt.early_stop ? "true" : "false");
  kv("gbdt.patience", std::to_string(b.gbdt.patience));
  kv("gbdt.histogram_bins", std::to_string(b.gbdt.histogram_bins));
  kv("forest.n_trees", std::to_string(b.forest.n_trees));
  kv("forest.max_depth", std::to_string(b.forest.max_depth));
  kv("forest.min_leaf", g17(b.forest.min_leaf));
  kv("forest.feature_rate", g17(b.forest.feature_rate));
  kv("forest.bootstrap", b.forest.bootstrap ? "true" : "false");
  return s.str();
}

Datasets load_datasets(const ExperimentConfig& c) {
  Datasets d;
  auto take = [&](const std::filesystem::path& p, Source src, std::vector<ParticipantRecord>& dst) {
    auto parsed = parse_csv(p, src);
    for (auto& w : parsed.report.warnings) d.warnings.push_back(p.filename().string() + ": " + w);
    dst = std::move(parsed.records);
  };
  if (c.nhanes_csv) {
    take(*c.nhanes_csv, Source::Nhanes, d.internal);
  } else if (c.synthetic_n > 0) {
    synth::CohortOptions o;
    o.n = c.synthetic_n;
    o.seed = c.base.seed;
    d.internal = synth::generate_cohort(o);
  } else {
    throw ConfigError("no internal data: set nhanes or synthetic_n");
  }
  if (c.charls_csv) {
    take(*c.charls_csv, Source::Charls, d.external);
  } else if (c.synthetic_external_n > 0) {
    synth::CohortOptions o;
    o.n = c.synthetic_external_n;
    o.seed = c.base.seed + 1;
    o.source = Source::Charls;
    d.external = synth::generate_cohort(o);
  }
  return d;
}

const SplitMetrics* ExperimentResult::find(Split s) const {
  for (const auto& m : splits) {
    if (m.split == s) return &m;
  }
  return nullptr;
}

TaskSplits prepare_task(const ExperimentConfig& config, const Datasets& data, Task task) {
  TaskSplits ts;
  ts.task = task;
  const FeatureMask& mask = config.base.mask;
  auto internal = apply_exclusions(data.internal, task, mask);
  ts.internal_exclusions = internal.report;
  if (internal.kept.empty()) {
    throw ConfigError(std::string(to_string(task)) + ": no internal records survive exclusions");
  }
  std::optional<std::vector<double>> labels;
  if (config.stratify && is_classification(task)) {
    labels.emplace();
    for (const auto& r : internal.kept) labels->push_back(derive_target(r, task, config.base.target));
  }
  ts.assignment = labels ? split(internal.kept, config.base.seed, config.ratios,
                                 std::span<const double>(*labels))
                         : split(internal.kept, config.base.seed, config.ratios);
  for (std::size_t i = 0; i < internal.kept.size(); ++i) {
    switch (ts.assignment.splits[i]) {
      case Split::Train: ts.train.push_back(internal.kept[i]); break;
      case Split::Val: ts.val.push_back(internal.kept[i]); break;
      case Split::Test: ts.test.push_back(internal.kept[i]); break;
      case Split::External: ts.external.push_back(internal.kept[i]); break;
    }
  }
  ts.external_supplied = !data.external.empty() || !ts.external.empty();
  if (!data.external.empty()) {
    auto ext = apply_exclusions(data.external, task, mask);
    ts.external_exclusions = ext.report;
    for (auto& r : ext.kept) ts.external.push_back(std::move(r));
    if (ts.external.empty()) {
      std::string top;
      std::size_t most = 0;
      for (const auto& [reason, count] : ext.report.excluded) {
        if (count > most) {
          most = count;
          top = reason;
        }
      }
      ts.external_note = "unavailable: no eligible external records";
      if (!top.empty()) ts.external_note += " (" + top + ": " + std::to_string(most) + ")";
    }
  }
  ts.encoder = FeatureEncoder::fit(ts.train, mask);
  std::ostringstream manifest;
  manifest << "task=" << to_string(task) << '\n'
           << ts.assignment.manifest_csv() << "internal\n"
           << to_csv_text(internal.kept) << "external\n"
           << to_csv_text(ts.external);
  ts.data_manifest = fnv1a_hex(manifest.str());
  return ts;
}

ExperimentResult run_cell(const ExperimentConfig& config, const TaskSplits& ts, ModelKind model) {
  const TrainConfig cfg = config.cell(ts.task, model);
  const std::string fp = fingerprint(cfg, ts.data_manifest);
  const auto cache_file = config.out_dir / "cache" / (fp + ".json");
  if (config.use_cache && std::filesystem::exists(cache_file)) {
    try {
      ExperimentResult r = result_from_json(json::parse(read_text(cache_file)));
      if (r.fingerprint == fp) {
        r.from_cache = true;
        return r;
      }
    } catch (const std::exception&) {
      // unreadable cache entries are recomputed
    }
  }

  ExperimentResult r;
  r.task = ts.task;
  r.model = model;
  r.fingerprint = fp;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const TaskData tr = prepare(ts.train, ts.task, ts.encoder, cfg.target);
    const TaskData va = prepare(ts.val, ts.task, ts.encoder, cfg.target);
    const TaskData te = prepare(ts.test, ts.task, ts.encoder, cfg.target);
    TrainResult res = train(cfg, ts.encoder, tr, va);
    res.model.fingerprint = fp;
    r.epochs = res.history.epochs;
    r.best_epoch = res.history.best_epoch;
    r.warnings = res.history.warnings;
    r.splits.push_back(evaluate(res.model, va, Split::Val, cfg, nullptr));
    std::vector<double> test_preds;
    r.splits.push_back(evaluate(res.model, te, Split::Test, cfg, &test_preds));
    if (ts.external_supplied) {
      if (ts.external.empty()) {
        SplitMetrics m;
        m.split = Split::External;
        m.status = ts.external_note;
        r.splits.push_back(m);
      } else {
        const TaskData ex = prepare(ts.external, ts.task, ts.encoder, cfg.target);
        r.splits.push_back(evaluate(res.model, ex, Split::External, cfg, nullptr));
      }
    }
    if (!test_preds.empty()) {
      if (is_classification(ts.task)) {
        try {
          r.roc = roc_points(test_preds, te.y);
        } catch (const UndefinedMetric&) {
          r.warnings.emplace_back("test split has a single class; no ROC curve");
        }
      } else {
        for (std::size_t i = 0; i < te.size(); ++i) r.scatter.push_back({te.ids[i], te.y[i], test_preds[i]});
      }
      r.race_groups = group_summary(ts.test, Grouping::Race, ts.task, test_preds,
                                    {cfg.threshold, cfg.averaging, cfg.target});
    }
    if (config.save_models) {
      const auto dir = config.out_dir / "models" / cell_name(ts.task, model);
      res.model.save(dir);
      save_background(dir, sample_rows(tr.x, 512, cfg.seed));
    }
  } catch (const std::exception& e) {
    r.error = e.what();
    r.splits.clear();
    for (Split s : {Split::Val, Split::Test}) {
      SplitMetrics m;
      m.split = s;
      m.status = "failed: " + r.error;
      r.splits.push_back(m);
    }
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (config.use_cache && r.error.empty()) write_text(cache_file, result_json(r).dump() + "\n");
  return r;
}

std::string metrics_csv(std::span<const ExperimentResult> results) {
  std::ostringstream s;
  s << "task,model,split,n,auc,acc,f1,precision,recall,mae,rmse,r2,status,fingerprint\n";
  for (const auto& r : results) {
    for (const auto& m : r.splits) {
      s << to_string(r.task) << ',' << to_string(r.model) << ',' << to_string(m.split) << ',' << m.n << ',';
      if (m.cls) {
        s << num(m.cls->auc, 6) << ',' << num(m.cls->acc, 6) << ',' << num(m.cls->f1, 6) << ','
          << num(m.cls->precision, 6) << ',' << num(m.cls->recall, 6) << ",,,,";
      } else if (m.reg) {
        s << ",,,,," << num(m.reg->mae, 6) << ',' << num(m.reg->rmse, 6) << ',' << num(m.reg->r2, 6) << ',';
      } else {
        s << ",,,,,,,,";
      }
      std::string status = m.status;
      std::replace(status.begin(), status.end(), ',', ';');
      std::replace(status.begin(), status.end(), '\n', ' ');
      s << status << ',' << r.fingerprint << '\n';
    }
  }
  return s.str();
}

namespace {

std::string characteristic_cell(const CharacteristicRow* c) {
  if (!c) return "";
  if (c->percent) return num(c->mean, 1) + "%";
  return num(c->mean, 2) + " ± " + num(c->sd, 2);
}

const CharacteristicRow* find_row(const GroupStats& g, const std::string& var) {
  for (const auto& c : g.characteristics) {
    if (c.variable == var) return &c;
  }
  return nullptr;
}

// One column per (label, group) pair, one row per variable.
void characteristics_table(std::ostringstream& s,
                           const std::vector<std::pair<std::string, const GroupStats*>>& cols) {
  std::vector<std::string> vars;
  for (const auto& [label, g] : cols) {
    for (const auto& c : g->characteristics) {
      if (std::find(vars.begin(), vars.end(), c.variable) == vars.end()) vars.push_back(c.variable);
    }
  }
  s << "| Variable |";
  for (const auto& [label, g] : cols) s << ' ' << label << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) s << "---|";
  s << "\n| N |";
  for (const auto& [label, g] : cols) s << ' ' << g->count << " |";
  s << '\n';
  for (const auto& v : vars) {
    s << "| " << v << " |";
    for (const auto& [label, g] : cols) s << ' ' << characteristic_cell(find_row(*g, v)) << " |";
    s << '\n';
  }
  s << '\n';
}

std::string metric_cells(const SplitMetrics* m, bool cls) {
  const int n = cls ? 5 : 3;
  if (!m || (!m->cls && !m->reg)) {
    std::string status = m ? m->status : "n/a";
    std::string out = " " + status + " |";
    for (int i = 1; i < n; ++i) out += " |";
    return out;
  }
  if (cls) {
    return " " + num(m->cls->auc) + " | " + num(m->cls->acc) + " | " + num(m->cls->f1) + " | " +
           num(m->cls->precision) + " | " + num(m->cls->recall) + " |";
  }
  return " " + num(m->reg->mae) + " | " + num(m->reg->rmse) + " | " + num(m->reg->r2) + " |";
}

}  // namespace

std::string render_report(const ExperimentConfig& config, const ExperimentRun& run) {
  std::ostringstream s;
  s << "# Experiment report\n\n";
  s << "Seed " << config.base.seed << ", feature mask `" << mask_text(config.base.mask)
    << "`, split " << g17(config.ratios.train) << "/" << g17(config.ratios.val) << "/"
    << g17(config.ratios.test) << (config.stratify ? " (stratified)" : "") << ".\n\n";
  for (const auto& ts : run.tasks) {
    const bool cls = is_classification(ts.task);
    const IndexKind kind = index_kind(ts.task);
    s << "## " << to_string(ts.task) << "\n\n";
    if (cls) {
      s << "Positive when " << to_string(kind) << " > " << num(threshold(kind), 2) << ".\n\n";
    } else {
      s << "Target: " << to_string(kind) << " value.\n\n";
    }
    s << "### Cohort characteristics\n\n";
    std::vector<GroupSummary> keep;
    std::vector<std::string> labels;
    const std::vector<std::pair<std::string, const std::vector<ParticipantRecord>*>> parts = {
        {"Train", &ts.train}, {"Val", &ts.val}, {"Test", &ts.test}, {"External", &ts.external}};
    for (const auto& [label, recs] : parts) {
      if (recs->empty()) continue;
      keep.push_back(group_summary(*recs, Grouping::All, ts.task, {}, {config.base.threshold,
                                                                      config.base.averaging,
                                                                      config.base.target}));
      labels.push_back(label);
    }
    std::vector<std::pair<std::string, const GroupStats*>> cols;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (const auto& g : keep[i].groups) cols.emplace_back(labels[i], &g);
    }
    characteristics_table(s, cols);

    s << "### Threshold strata\n\n";
    std::vector<GroupSummary> strata;
    std::vector<std::string> slabels;
    for (const auto& [label, recs] : parts) {
      if (recs->empty()) continue;
      strata.push_back(group_summary(*recs, Grouping::Threshold, ts.task, {},
                                     {config.base.threshold, config.base.averaging, config.base.target}));
      slabels.push_back(label);
    }
    cols.clear();
    for (std::size_t i = 0; i < strata.size(); ++i) {
      for (const auto& g : strata[i].groups) cols.emplace_back(slabels[i] + " " + g.name, &g);
    }
    characteristics_table(s, cols);

    s << "### Model comparison\n\n";
    auto head = [&](const std::string& prefix) {
      std::string h;
      for (const char* m : cls ? std::vector<const char*>{"AUC", "ACC", "F1", "Precision", "Recall"}
                               : std::vector<const char*>{"MAE", "RMSE", "R2"}) {
        h += " " + prefix + m + " |";
      }
      return h;
    };
    const std::string rule = cls ? "---|---|---|---|---|" : "---|---|---|";
    s << "| Model |" << head(ts.external_supplied ? "Internal " : "");
    if (ts.external_supplied) s << head("External ");
    s << "\n|---|" << rule;
    if (ts.external_supplied) s << rule;
    s << "\n";
    for (const auto& r : run.results) {
      if (r.task != ts.task) continue;
      s << "| " << display_name(r.model, r.task) << " |" << metric_cells(r.find(Split::Test), cls);
      if (ts.external_supplied) s << metric_cells(r.find(Split::External), cls);
      s << '\n';
    }
    s << '\n';

    s << "### By race (internal test, " << (cls ? "AUC" : "R2") << ")\n\n";
    s << "| Model |";
    for (std::size_t i = 0; i < kNumRaces; ++i) s << ' ' << to_string(static_cast<Race>(i)) << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < kNumRaces; ++i) s << "---|";
    s << '\n';
    for (const auto& r : run.results) {
      if (r.task != ts.task) continue;
      s << "| " << display_name(r.model, r.task) << " |";
      for (std::size_t i = 0; i < kNumRaces; ++i) {
        const std::string race(to_string(static_cast<Race>(i)));
        std::string cell = "";
        for (const auto& g : r.race_groups.groups) {
          if (g.name != race) continue;
          if (g.cls) cell = num(g.cls->auc) + " (n=" + std::to_string(g.count) + ")";
          else if (g.reg) cell = num(g.reg->r2) + " (n=" + std::to_string(g.count) + ")";
          else cell = "undefined (n=" + std::to_string(g.count) + ")";
        }
        s << ' ' << cell << " |";
      }
      s << '\n';
    }
    s << '\n';

    std::vector<std::string> notes;
    for (const auto& r : run.results) {
      if (r.task != ts.task) continue;
      if (!r.error.empty()) notes.push_back(display_name(r.model, r.task) + " failed: " + r.error);
      for (const auto& w : r.warnings) notes.push_back(display_name(r.model, r.task) + ": " + w);
      for (const auto& w : r.race_groups.warnings) notes.push_back(display_name(r.model, r.task) + ": " + w);
    }
    if (!notes.empty()) {
      s << "### Notes\n\n";
      for (const auto& n : notes) s << "- " << n << '\n';
      s << '\n';
    }
  }
  return s.str();
}

ExperimentRun run_experiment(const ExperimentConfig& config, const Datasets& data) {
  ExperimentRun run;
  std::filesystem::create_directories(config.out_dir);
  for (Task task : config.tasks) {
    TaskSplits ts;
    try {
      ts = prepare_task(config, data, task);
    } catch (const std::exception& e) {
      for (ModelKind m : config.models) {
        ExperimentResult r;
        r.task = task;
        r.model = m;
        r.error = e.what();
        SplitMetrics sm;
        sm.status = "failed: " + r.error;
        r.splits.push_back(sm);
        run.results.push_back(std::move(r));
      }
      continue;
    }
    for (ModelKind m : config.models) run.results.push_back(run_cell(config, ts, m));
    run.tasks.push_back(std::move(ts));
  }

  write_text(config.out_dir / "metrics.csv", metrics_csv(run.results));
  std::ostringstream timings;
  timings << "task,model,wall_seconds,from_cache\n";
  for (const auto& r : run.results) {
    const std::string name = cell_name(r.task, r.model);
    timings << to_string(r.task) << ',' << to_string(r.model) << ',' << num(r.wall_seconds, 3) << ','
            << (r.from_cache ? 1 : 0) << '\n';
    if (!r.roc.empty()) {
      std::ostringstream roc;
      roc << "fpr,tpr,threshold\n";
      for (const auto& p : r.roc) {
        roc << g17(p.fpr) << ',' << g17(p.tpr) << ',' << (std::isinf(p.threshold) ? "inf" : g17(p.threshold)) << '\n';
      }
      write_text(config.out_dir / ("roc_" + name + ".csv"), roc.str());
    }
    if (!r.scatter.empty()) {
      std::ostringstream sc;
      sc << "id,target,prediction\n";
      for (const auto& p : r.scatter) sc << p.id << ',' << g17(p.target) << ',' << g17(p.prediction) << '\n';
      write_text(config.out_dir / ("scatter_" + name + ".csv"), sc.str());
    }
    if (!r.race_groups.groups.empty()) {
      std::ostringstream g;
      g << "group,n,auc,acc,f1,precision,recall,mae,rmse,r2,note\n";
      for (const auto& st : r.race_groups.groups) {
        g << st.name << ',' << st.count << ',';
        if (st.cls) {
          g << num(st.cls->auc, 6) << ',' << num(st.cls->acc, 6) << ',' << num(st.cls->f1, 6) << ','
            << num(st.cls->precision, 6) << ',' << num(st.cls->recall, 6) << ",,,,";
        } else if (st.reg) {
          g << ",,,,," << num(st.reg->mae, 6) << ',' << num(st.reg->rmse, 6) << ',' << num(st.reg->r2, 6) << ',';
        } else {
          g << ",,,,,,,,";
        }
        std::string note = st.note;
        std::replace(note.begin(), note.end(), ',', ';');
        g << note << '\n';
      }
      write_text(config.out_dir / ("groups_" + name + ".csv"), g.str());
    }
  }
  write_text(config.out_dir / "timings.csv", timings.str());
  write_text(config.out_dir / "report.md", render_report(config, run));
  return run;
}

}  // namespace irkit::harness
