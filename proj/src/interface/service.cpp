#include "irkit/interface/service.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "irkit/errors.hpp"
#include "irkit/explain.hpp"
#include "irkit/indices.hpp"
#include "irkit/version.hpp"

namespace irkit::service {

using nlohmann::json;

namespace {

constexpr std::array<InputRange, 7> kRanges = {{
    {"age", 18.0, 120.0, "years"},
    {"bmi", 10.0, 80.0, "kg/m2"},
    {"waist", 40.0, 220.0, "cm"},
    {"pulse", 30.0, 220.0, "bpm"},
    {"systolic", 70.0, 260.0, "mmHg"},
    {"diastolic", 30.0, 160.0, "mmHg"},
    {"fpg", 30.0, 300.0, "mg/dL"},
}};

const std::array<std::string_view, kNumSexes> kSexes = {"male", "female"};
const std::array<std::string_view, kNumRaces> kRaces = {"MexicanAmerican", "OtherHispanic",
                                                       "NonHispanicWhite", "NonHispanicBlack",
                                                       "OtherMulti"};

struct Errors {
  json list = json::array();
  void add(const std::string& field, const std::string& message) {
    list.push_back({{"field", field}, {"message", message}});
  }
  bool empty() const { return list.empty(); }
};

Reply error_reply(int status, std::string_view what, const json& errors) {
  return {status,
          {{"schema_version", kSchemaVersion}, {"status", status}, {"error", what}, {"errors", errors}}};
}

Reply error_reply(int status, std::string_view what, const std::string& field, const std::string& message) {
  Errors e;
  e.add(field, message);
  return error_reply(status, what, e.list);
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string join(const std::string& prefix, std::string_view name) {
  return prefix.empty() ? std::string(name) : prefix + "." + std::string(name);
}

void set_numeric(ParticipantRecord& r, std::size_t s, double v) {
  switch (static_cast<Feature>(s)) {
    case Feature::Age: r.age = v; break;
    case Feature::Bmi: r.bmi = v; break;
    case Feature::Waist: r.waist_cm = v; break;
    case Feature::Pulse: r.pulse = v; break;
    case Feature::Systolic: r.systolic = v; break;
    case Feature::Diastolic: r.diastolic = v; break;
    case Feature::Fpg: r.fpg_mg_dl = v; break;
    default: throw DomainError("not a numeric feature slot");
  }
}

std::optional<FeatureMask> parse_mask(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "full") return FeatureMask::full();
    if (s == "simplified") return FeatureMask::simplified();
    return std::nullopt;
  }
  if (j.is_array() && !j.empty()) {
    std::vector<std::string> names;
    for (const auto& e : j) {
      if (!e.is_string() || !feature_from_name(e.get<std::string>())) return std::nullopt;
      names.push_back(e.get<std::string>());
    }
    return FeatureMask::from_names(names);
  }
  return std::nullopt;
}

json mask_json(const FeatureMask& m) { return m.names(); }

struct Request {
  harness::ModelKind kind = harness::ModelKind::Catboost;
  bool kind_given = false;
  std::string model_text;
  FeatureMask mask = FeatureMask::full();
  ParticipantRecord record;
};

// Validates a PredictRequest object. `extra` lists keys the caller handles.
Request parse_request(const json& j, const std::string& prefix, std::span<const std::string_view> extra,
                      Errors& err) {
  Request req;
  req.record.id = "request";
  if (!j.is_object()) {
    err.add(prefix, "must be a JSON object");
    return req;
  }
  for (const auto& [key, val] : j.items()) {
    const bool known = key == "schema_version" || key == "model" || key == "mask" || key == "features" ||
                       std::find(extra.begin(), extra.end(), key) != extra.end();
    if (!known) err.add(join(prefix, key), "unknown field");
  }
  if (j.contains("schema_version") &&
      (!j["schema_version"].is_number_integer() || j["schema_version"].get<long>() != kSchemaVersion)) {
    err.add(join(prefix, "schema_version"), "must be 1");
  }
  if (j.contains("mask")) {
    if (const auto m = parse_mask(j["mask"])) {
      req.mask = *m;
    } else {
      err.add(join(prefix, "mask"), "must be \"full\", \"simplified\" or a non-empty list of feature names");
    }
  }
  if (j.contains("model")) {
    if (j["model"].is_string()) {
      req.model_text = j["model"].get<std::string>();
      req.kind_given = true;
    } else {
      err.add(join(prefix, "model"), "must be a string");
    }
  }
  const std::string fprefix = join(prefix, "features");
  if (!j.contains("features") || !j["features"].is_object()) {
    err.add(fprefix, "required object of measurements");
    return req;
  }
  const json& f = j["features"];
  for (const auto& [key, val] : f.items()) {
    const auto s = feature_from_name(key);
    if (!s || feature_name(*s) != key) {
      err.add(join(fprefix, key), "unknown feature");
      continue;
    }
    const std::string field = join(fprefix, key);
    if (*s == slot(Feature::Sex)) {
      const auto it = val.is_string() ? std::find(kSexes.begin(), kSexes.end(), val.get<std::string>())
                                      : kSexes.end();
      if (it == kSexes.end()) {
        err.add(field, "must be one of \"male\", \"female\"");
      } else {
        req.record.sex = *parse_sex(*it);
      }
    } else if (*s == slot(Feature::Race)) {
      const auto it = val.is_string() ? std::find(kRaces.begin(), kRaces.end(), val.get<std::string>())
                                      : kRaces.end();
      if (it == kRaces.end()) {
        err.add(field, "must be one of MexicanAmerican, OtherHispanic, NonHispanicWhite, NonHispanicBlack, "
                       "OtherMulti");
      } else {
        req.record.race = *parse_race(*it);
      }
    } else {
      const InputRange* r = input_range(key);
      if (!val.is_number()) {
        err.add(field, "must be a number (" + std::string(r->unit) + ")");
        continue;
      }
      const double v = val.get<double>();
      if (!(v >= r->min && v <= r->max)) {
        err.add(field, "must be between " + fmt_num(r->min) + " and " + fmt_num(r->max) + " " +
                           std::string(r->unit) + ", got " + fmt_num(v));
        continue;
      }
      set_numeric(req.record, *s, v);
    }
  }
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (!req.mask[s]) continue;
    const std::string name(feature_name(s));
    if (!f.contains(name)) err.add(join(fprefix, name), "required by mask");
  }
  return req;
}

// Resolves the model set; nullptr with a filled 404 reply on failure.
const ModelSet* resolve(const Registry& reg, const Request& req, Reply* fail) {
  std::string id;
  if (req.kind_given) {
    try {
      id = set_id(harness::parse_model(req.model_text), req.mask);
    } catch (const std::exception&) {
      *fail = error_reply(404, "unknown model", "model", "unknown model '" + req.model_text + "'");
      return nullptr;
    }
  } else {
    const ModelSet* def = reg.find(reg.default_id);
    id = set_id(def->kind, req.mask);
  }
  const ModelSet* set = reg.find(id);
  if (set == nullptr) {
    std::string avail;
    for (const auto& s : reg.sets) avail += (avail.empty() ? "" : ", ") + s.id;
    *fail = error_reply(404, "unknown model", "model",
                        "no model set '" + id + "' in this bundle (available: " + avail + ")");
  }
  return set;
}

json task_output(Task task, const harness::Model& m, double pred, double threshold) {
  json o;
  const IndexKind ik = index_kind(task);
  if (is_classification(task)) {
    o["probability"] = pred;
    o["label"] = pred >= threshold ? 1 : 0;
    o["threshold"] = threshold;
  } else {
    o["value"] = pred;
    o["label"] = classify({ik, pred}).positive ? 1 : 0;
  }
  o["index"] = to_string(ik);
  o["cutoff"] = irkit::threshold(ik);
  o["fingerprint"] = m.fingerprint;
  return o;
}

json response_head(const ModelSet& set) {
  return {{"schema_version", kSchemaVersion},
          {"version", kVersion},
          {"model", set.id},
          {"kind", harness::to_string(set.kind)},
          {"mask", mask_json(set.mask)},
          {"fingerprint", set.fingerprint}};
}

// One PredictResponse per record, batching each task's model call.
std::vector<json> predict_many(const ModelSet& set, std::span<const ParticipantRecord> recs, double threshold) {
  std::vector<json> out(recs.size(), response_head(set));
  for (auto& o : out) o["outputs"] = json::object();
  for (const auto& [task, model] : set.models) {
    const auto x = model->encoder.encode_raw_all(recs);
    const auto p = model->predict(x);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (!std::isfinite(p[i])) throw NumericFault("model produced a non-finite output for " + std::string(to_string(task)));
      out[i]["outputs"][std::string(to_string(task))] = task_output(task, *model, p[i], threshold);
    }
  }
  return out;
}

bool parse_body(std::string_view body, json* out, Reply* fail) {
  try {
    *out = json::parse(body);
    return true;
  } catch (const json::parse_error& e) {
    *fail = error_reply(400, "malformed JSON", "", e.what());
    return false;
  }
}

}  // namespace

std::span<const InputRange> input_ranges() { return kRanges; }

const InputRange* input_range(std::string_view feature) {
  for (const auto& r : kRanges) {
    if (r.feature == feature) return &r;
  }
  return nullptr;
}

std::string set_id(harness::ModelKind kind, const FeatureMask& mask) {
  std::string id(harness::to_string(kind));
  if (mask == FeatureMask::full()) return id;
  if (mask == FeatureMask::simplified()) return id + "-simplified";
  for (const auto& n : mask.names()) id += "-" + n;
  return id;
}

const ModelSet* Registry::find(std::string_view id) const {
  for (const auto& s : sets) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

void Registry::add(harness::Model model, std::vector<FeatureVector> background) {
  const std::string id = set_id(model.kind, model.mask());
  auto it = std::find_if(sets.begin(), sets.end(), [&](const ModelSet& s) { return s.id == id; });
  if (it == sets.end()) {
    ModelSet s;
    s.id = id;
    s.kind = model.kind;
    s.mask = model.mask();
    sets.push_back(std::move(s));
    it = sets.end() - 1;
  }
  const Task task = model.task;
  if (it->models.count(task) != 0) {
    throw ConfigError("two bundles provide " + std::string(to_string(task)) + " for model set " + id);
  }
  it->models[task] = std::make_shared<const harness::Model>(std::move(model));
  it->backgrounds[task] = std::move(background);
}

void Registry::finalize() {
  if (sets.empty()) throw ConfigError("no model bundles to serve");
  std::sort(sets.begin(), sets.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (auto& s : sets) {
    std::string key;
    for (const auto& [task, m] : s.models) key += std::string(to_string(task)) + ":" + m->fingerprint + "\n";
    s.fingerprint = harness::fnv1a_hex(key);
  }
  default_id = find("catboost") != nullptr ? "catboost" : sets.front().id;
}

Registry load_registry(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ConfigError("model directory not found: " + root.string());
  std::vector<fs::path> dirs;
  auto scan = [&dirs](const fs::path& d) {
    for (const auto& e : fs::directory_iterator(d)) {
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
    }
  };
  if (fs::exists(root / "manifest.json")) {
    dirs.push_back(root);
  } else {
    scan(root);
    if (dirs.empty() && fs::is_directory(root / "models")) scan(root / "models");
  }
  std::sort(dirs.begin(), dirs.end());
  Registry reg;
  for (const auto& d : dirs) reg.add(harness::Model::load(d), harness::load_background(d));
  if (reg.sets.empty()) throw ConfigError("no model bundles under " + root.string());
  reg.finalize();
  return reg;
}

// ---------------------------------------------------------------------------

Service::Service(Registry registry, ServiceOptions options)
    : registry_(std::move(registry)), options_(options) {
  if (registry_.sets.empty()) throw ConfigError("service needs at least one model set");
  if (registry_.default_id.empty()) registry_.finalize();
}

Reply Service::health() const {
  json ids = json::array();
  for (const auto& s : registry_.sets) ids.push_back(s.id);
  return {200, {{"schema_version", kSchemaVersion}, {"status", "ok"}, {"version", kVersion}, {"models", ids}}};
}

Reply Service::models() const {
  json list = json::array();
  for (const auto& s : registry_.sets) {
    json tasks = json::object();
    for (const auto& [task, m] : s.models) {
      tasks[std::string(to_string(task))] = {
          {"fingerprint", m->fingerprint},
          {"display_name", harness::display_name(m->kind, task)},
          {"explain", !s.backgrounds.at(task).empty()}};
    }
    list.push_back({{"id", s.id},
                    {"kind", harness::to_string(s.kind)},
                    {"mask", mask_json(s.mask)},
                    {"fingerprint", s.fingerprint},
                    {"tasks", tasks}});
  }
  json ranges = json::object();
  for (const auto& r : kRanges) {
    ranges[std::string(r.feature)] = {{"min", r.min}, {"max", r.max}, {"unit", r.unit}};
  }
  json vocab = {{"sex", kSexes}, {"race", kRaces}};
  return {200,
          {{"schema_version", kSchemaVersion},
           {"version", kVersion},
           {"default", registry_.default_id},
           {"models", list},
           {"ranges", ranges},
           {"vocabularies", vocab},
           {"max_whatif_points", options_.max_grid}}};
}

Reply Service::predict(std::string_view body) const {
  json j;
  Reply fail;
  if (!parse_body(body, &j, &fail)) return fail;
  Errors err;
  const Request req = parse_request(j, "", {}, err);
  if (!err.empty()) return error_reply(422, "validation failed", err.list);
  const ModelSet* set = resolve(registry_, req, &fail);
  if (set == nullptr) return fail;
  return {200, predict_many(*set, std::span(&req.record, 1), options_.threshold).front()};
}

Reply Service::whatif(std::string_view body) const {
  json j;
  Reply fail;
  if (!parse_body(body, &j, &fail)) return fail;
  Errors err;
  if (!j.is_object()) return error_reply(422, "validation failed", "", "must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    if (key != "schema_version" && key != "base" && key != "sweep") err.add(key, "unknown field");
  }
  if (j.contains("schema_version") &&
      (!j["schema_version"].is_number_integer() || j["schema_version"].get<long>() != kSchemaVersion)) {
    err.add("schema_version", "must be 1");
  }
  Request req;
  if (j.contains("base")) {
    req = parse_request(j["base"], "base", {}, err);
  } else {
    err.add("base", "required PredictRequest object");
  }

  std::string feature;
  std::vector<double> values;
  const InputRange* range = nullptr;
  if (!j.contains("sweep") || !j["sweep"].is_object()) {
    err.add("sweep", "required object with feature and values, or feature, from, to and steps");
  } else {
    const json& sw = j["sweep"];
    for (const auto& [key, val] : sw.items()) {
      if (key != "feature" && key != "values" && key != "from" && key != "to" && key != "steps") {
        err.add("sweep." + key, "unknown field");
      }
    }
    if (sw.contains("feature") && sw["feature"].is_string()) {
      feature = sw["feature"].get<std::string>();
      range = input_range(feature);
      if (range == nullptr) err.add("sweep.feature", "must be a numeric feature (age, bmi, waist, pulse, systolic, diastolic, fpg)");
    } else {
      err.add("sweep.feature", "required string");
    }
    if (sw.contains("values")) {
      if (!sw["values"].is_array() || sw["values"].empty()) {
        err.add("sweep.values", "must be a non-empty array of numbers");
      } else if (sw["values"].size() > options_.max_grid) {
        err.add("sweep.values", "at most " + std::to_string(options_.max_grid) + " points");
      } else {
        for (std::size_t i = 0; i < sw["values"].size(); ++i) {
          const json& v = sw["values"][i];
          if (!v.is_number()) {
            err.add("sweep.values[" + std::to_string(i) + "]", "must be a number");
          } else {
            values.push_back(v.get<double>());
          }
        }
      }
    } else if (sw.contains("from") || sw.contains("to") || sw.contains("steps")) {
      const bool ok = sw.contains("from") && sw["from"].is_number() && sw.contains("to") &&
                      sw["to"].is_number() && sw.contains("steps") && sw["steps"].is_number_integer();
      if (!ok) {
        err.add("sweep", "from and to must be numbers and steps an integer");
      } else {
        const long steps = sw["steps"].get<long>();
        const double a = sw["from"].get<double>(), b = sw["to"].get<double>();
        if (steps < 1 || static_cast<std::size_t>(steps) > options_.max_grid) {
          err.add("sweep.steps", "must be between 1 and " + std::to_string(options_.max_grid));
        } else {
          for (long i = 0; i < steps; ++i) {
            values.push_back(steps == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(steps - 1));
          }
        }
      }
    } else {
      err.add("sweep.values", "required (or from, to and steps)");
    }
    if (range != nullptr) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= range->min && values[i] <= range->max)) {
          err.add("sweep.values[" + std::to_string(i) + "]",
                  "must be between " + fmt_num(range->min) + " and " + fmt_num(range->max) + " " +
                      std::string(range->unit) + ", got " + fmt_num(values[i]));
        }
      }
      const std::size_t s = *feature_from_name(feature);
      if (!req.mask[s]) err.add("sweep.feature", "'" + feature + "' is not an input of the selected mask");
    }
  }
  if (!err.empty()) return error_reply(422, "validation failed", err.list);
  const ModelSet* set = resolve(registry_, req, &fail);
  if (set == nullptr) return fail;

  const std::size_t s = *feature_from_name(feature);
  std::vector<ParticipantRecord> recs(values.size(), req.record);
  for (std::size_t i = 0; i < values.size(); ++i) set_numeric(recs[i], s, values[i]);
  json out = {{"schema_version", kSchemaVersion},
              {"version", kVersion},
              {"model", set->id},
              {"fingerprint", set->fingerprint},
              {"feature", feature},
              {"unit", range->unit},
              {"values", values},
              {"responses", predict_many(*set, recs, options_.threshold)}};
  return {200, out};
}

Reply Service::explain(std::string_view body) const {
  json j;
  Reply fail;
  if (!parse_body(body, &j, &fail)) return fail;
  Errors err;
  static constexpr std::array<std::string_view, 4> kExtra = {"task", "n_permutations", "seed", "units"};
  const Request req = parse_request(j, "", kExtra, err);
  Task task = Task::MetsClass;
  std::size_t n_perm = options_.default_permutations;
  std::uint64_t seed = options_.seed;
  explain::Units units = explain::Units::Probability;
  if (j.is_object()) {
    if (j.contains("task")) {
      try {
        task = parse_task(j["task"].is_string() ? j["task"].get<std::string>() : std::string("?"));
      } catch (const std::exception&) {
        err.add("task", "must be one of HomaClass, TygClass, MetsClass, MetsRegress");
      }
    }
    if (j.contains("n_permutations")) {
      const json& v = j["n_permutations"];
      if (!v.is_number_integer() || v.get<long>() < 1 ||
          static_cast<std::size_t>(v.get<long>()) > options_.max_permutations) {
        err.add("n_permutations", "must be an integer between 1 and " + std::to_string(options_.max_permutations));
      } else {
        n_perm = static_cast<std::size_t>(v.get<long>());
      }
    }
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) {
        err.add("seed", "must be a non-negative integer");
      } else {
        seed = j["seed"].get<std::uint64_t>();
      }
    }
    if (j.contains("units")) {
      const std::string u = j["units"].is_string() ? j["units"].get<std::string>() : "";
      if (u == "probability") {
        units = explain::Units::Probability;
      } else if (u == "logit") {
        units = explain::Units::Logit;
      } else {
        err.add("units", "must be \"probability\" or \"logit\"");
      }
    }
  }
  if (!err.empty()) return error_reply(422, "validation failed", err.list);
  const ModelSet* set = resolve(registry_, req, &fail);
  if (set == nullptr) return fail;
  const auto it = set->models.find(task);
  if (it == set->models.end()) {
    return error_reply(404, "unknown model", "task",
                       "model set '" + set->id + "' has no " + std::string(to_string(task)) + " model");
  }
  const auto& background = set->backgrounds.at(task);
  if (background.empty()) {
    return error_reply(409, "explanation unavailable", "task",
                       "bundle for " + std::string(to_string(task)) + " has no background.json");
  }
  const harness::Model& model = *it->second;
  if (!is_classification(task)) units = explain::Units::Probability;
  explain::ShapleyOptions so;
  so.n_permutations = n_perm;
  so.seed = seed;
  const auto f = explain::model_function(model, units);
  explain::Attribution a =
      explain::shapley_sampling(f, background, model.encoder.encode_raw(req.record), model.mask(), so);
  json phi = json::object(), se = json::object();
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (!model.mask()[s]) continue;
    phi[std::string(feature_name(s))] = a.phi[s];
    se[std::string(feature_name(s))] = a.stderr_[s];
  }
  const bool cls = is_classification(task);
  json out = {{"schema_version", kSchemaVersion},
              {"version", kVersion},
              {"model", set->id},
              {"task", to_string(task)},
              {"fingerprint", model.fingerprint},
              {"instance_id", req.record.id},
              {"units", cls ? std::string(explain::to_string(units)) : std::string("value")},
              {"base_value", a.base_value},
              {"prediction", a.prediction},
              {"phi", phi},
              {"stderr", se},
              {"n_permutations", a.n_permutations},
              {"seed", seed},
              {"background_size", background.size()},
              {"efficiency_gap", a.efficiency_gap},
              {"efficiency_stderr", a.efficiency_stderr}};
  return {200, out};
}

Reply Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  struct Route {
    std::string_view path, method;
  };
  static constexpr std::array<Route, 5> kRoutes = {{{"/health", "GET"},
                                                   {"/models", "GET"},
                                                   {"/predict", "POST"},
                                                   {"/whatif", "POST"},
                                                   {"/explain", "POST"}}};
  const auto it = std::find_if(kRoutes.begin(), kRoutes.end(), [&](const Route& r) { return r.path == path; });
  if (it == kRoutes.end()) return error_reply(404, "not found", "path", "no endpoint " + std::string(path));
  if (it->method != method) {
    return error_reply(405, "method not allowed", "method", "use " + std::string(it->method) + " for " + std::string(path));
  }
  try {
    if (path == "/health") return health();
    if (path == "/models") return models();
    if (path == "/predict") return predict(body);
    if (path == "/whatif") return whatif(body);
    return explain(body);
  } catch (const std::exception& e) {
    return error_reply(500, "internal error", "", e.what());
  }
}

}  // namespace irkit::service
