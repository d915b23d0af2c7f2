#include "irkit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "irkit/errors.hpp"
#include "irkit/numcore/rng.hpp"
#include "json.hpp"

namespace irkit {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::optional<bool> parse_flag(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "1" || t == "true" || t == "yes" || t == "y") return true;
  if (t == "0" || t == "false" || t == "no" || t == "n") return false;
  return std::nullopt;
}

// Splits one CSV line honouring double quotes.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "age", "bmi", "waist", "pulse", "systolic", "diastolic", "fpg", "sex", "race"};

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Sex s) { return s == Sex::Male ? "male" : "female"; }

std::string_view to_string(Race r) {
  switch (r) {
    case Race::MexicanAmerican:
      return "MexicanAmerican";
    case Race::OtherHispanic:
      return "OtherHispanic";
    case Race::NonHispanicWhite:
      return "NonHispanicWhite";
    case Race::NonHispanicBlack:
      return "NonHispanicBlack";
    case Race::OtherMulti:
      return "OtherMulti";
  }
  return "?";
}

std::string_view to_string(Source s) { return s == Source::Nhanes ? "NHANES" : "CHARLS"; }

std::optional<Sex> parse_sex(std::string_view text) {
  const std::string t = lower(trim(text));
  // NHANES RIAGENDR coding: 1 male, 2 female.
  if (t == "male" || t == "m" || t == "1") return Sex::Male;
  if (t == "female" || t == "f" || t == "2") return Sex::Female;
  return std::nullopt;
}

std::optional<Race> parse_race(std::string_view text) {
  const std::string t = lower(trim(text));
  // NHANES RIDRETH1 coding 1..5.
  if (t == "mexicanamerican" || t == "mexican american" || t == "1") return Race::MexicanAmerican;
  if (t == "otherhispanic" || t == "other hispanic" || t == "2") return Race::OtherHispanic;
  if (t == "nonhispanicwhite" || t == "non-hispanic white" || t == "3") {
    return Race::NonHispanicWhite;
  }
  if (t == "nonhispanicblack" || t == "non-hispanic black" || t == "4") {
    return Race::NonHispanicBlack;
  }
  if (t == "othermulti" || t == "other" || t == "5") return Race::OtherMulti;
  return std::nullopt;
}

Source parse_source(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "nhanes") return Source::Nhanes;
  if (t == "charls") return Source::Charls;
  throw ConfigError("unknown source '" + std::string(text) + "' (expected nhanes or charls)");
}

// ---------------------------------------------------------------------------

std::string_view feature_name(std::size_t s) {
  if (s >= kNumFeatures) throw DomainError("feature slot out of range");
  return kFeatureNames[s];
}

std::optional<std::size_t> feature_from_name(std::string_view name) {
  const std::string n = lower(trim(name));
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (kFeatureNames[i] == n) return i;
  }
  if (n == "glucose" || n == "fpg_mg_dl") return slot(Feature::Fpg);
  if (n == "waist_cm") return slot(Feature::Waist);
  return std::nullopt;
}

FeatureMask FeatureMask::full() {
  FeatureMask m;
  m.active.fill(true);
  return m;
}

FeatureMask FeatureMask::simplified() {
  FeatureMask m;
  m.active[slot(Feature::Bmi)] = true;
  m.active[slot(Feature::Fpg)] = true;
  return m;
}

FeatureMask FeatureMask::from_names(std::span<const std::string> names) {
  FeatureMask m;
  for (const auto& n : names) {
    const auto s = feature_from_name(n);
    if (!s) throw ConfigError("unknown feature '" + n + "'");
    m.active[*s] = true;
  }
  if (m.count() == 0) throw ConfigError("feature mask selects no features");
  return m;
}

std::size_t FeatureMask::count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

std::vector<std::size_t> FeatureMask::numeric_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kNumNumeric; ++i) {
    if (active[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FeatureMask::categorical_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = kNumNumeric; i < kNumFeatures; ++i) {
    if (active[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::string> FeatureMask::names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (active[i]) out.emplace_back(kFeatureNames[i]);
  }
  return out;
}

double FeatureVector::get(std::size_t s) const {
  if (s < kNumNumeric) return numeric[s];
  if (s < kNumFeatures) return static_cast<double>(categorical[s - kNumNumeric]);
  throw DomainError("feature slot out of range");
}

void FeatureVector::set(std::size_t s, double v) {
  if (s < kNumNumeric) {
    numeric[s] = v;
  } else if (s < kNumFeatures) {
    categorical[s - kNumNumeric] = static_cast<int>(v);
  } else {
    throw DomainError("feature slot out of range");
  }
}

// ---------------------------------------------------------------------------

std::string_view to_string(Task t) {
  switch (t) {
    case Task::HomaClass:
      return "HomaClass";
    case Task::TygClass:
      return "TygClass";
    case Task::MetsClass:
      return "MetsClass";
    case Task::MetsRegress:
      return "MetsRegress";
  }
  return "?";
}

Task parse_task(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "homaclass" || t == "homa") return Task::HomaClass;
  if (t == "tygclass" || t == "tyg") return Task::TygClass;
  if (t == "metsclass" || t == "mets") return Task::MetsClass;
  if (t == "metsregress" || t == "mets-regress" || t == "metsreg") return Task::MetsRegress;
  throw ConfigError("unknown task '" + std::string(text) + "'");
}

bool is_classification(Task t) { return t != Task::MetsRegress; }

IndexKind index_kind(Task t) {
  switch (t) {
    case Task::HomaClass:
      return IndexKind::HomaIr;
    case Task::TygClass:
      return IndexKind::Tyg;
    case Task::MetsClass:
    case Task::MetsRegress:
      return IndexKind::MetsIr;
  }
  return IndexKind::MetsIr;
}

std::vector<std::string> required_target_fields(Task t) {
  switch (index_kind(t)) {
    case IndexKind::HomaIr:
      return {"fpg_mg_dl", "insulin_uU_ml"};
    case IndexKind::Tyg:
      return {"tg_mg_dl", "fpg_mg_dl"};
    case IndexKind::MetsIr:
      return {"fpg_mg_dl", "tg_mg_dl", "bmi", "hdl_mg_dl"};
  }
  return {};
}

namespace {

double need(const std::optional<double>& v, const char* field) {
  if (!v) throw DomainError(std::string("missing formula input: ") + field);
  return *v;
}

}  // namespace

IndexValue index_of(const ParticipantRecord& r, IndexKind kind, const TargetOptions& opt) {
  switch (kind) {
    case IndexKind::HomaIr:
      return homa_ir(glucose_mgdl_to_mmol(need(r.fpg_mg_dl, "fpg_mg_dl"), opt.glucose_mg_per_mmol),
                     need(r.insulin_uU_ml, "insulin_uU_ml"));
    case IndexKind::Tyg:
      return tyg(need(r.tg_mg_dl, "tg_mg_dl"), need(r.fpg_mg_dl, "fpg_mg_dl"));
    case IndexKind::MetsIr:
      return mets_ir(need(r.fpg_mg_dl, "fpg_mg_dl"), need(r.tg_mg_dl, "tg_mg_dl"),
                     need(r.bmi, "bmi"), need(r.hdl_mg_dl, "hdl_mg_dl"));
  }
  throw DomainError("unknown index kind");
}

double derive_target(const ParticipantRecord& r, Task task, const TargetOptions& opt) {
  const IndexValue v = index_of(r, index_kind(task), opt);
  if (task == Task::MetsRegress) return v.value;
  return classify(v).positive ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------

std::vector<std::string> mandatory_columns(Source schema) {
  std::vector<std::string> cols = {"id", "age", "sex"};
  if (schema == Source::Nhanes) cols.emplace_back("race");
  for (const char* c : {"fpg_mg_dl", "tg_mg_dl", "hdl_mg_dl", "diabetes"}) cols.emplace_back(c);
  return cols;
}

std::vector<std::string> optional_columns(Source schema) {
  std::vector<std::string> cols = {"height_cm", "weight_kg", "bmi",      "waist_cm",
                                   "pulse",     "systolic",  "diastolic"};
  if (schema == Source::Nhanes) cols.emplace_back("insulin_uU_ml");
  return cols;
}

ParsedCsv parse_csv_text(std::string_view text, Source schema) {
  ParsedCsv out;
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!trim(line).empty()) lines.push_back(line);
      start = end + 1;
    }
  }
  if (lines.empty()) throw SchemaError("empty CSV: no header row");
  // Strip a UTF-8 byte-order mark.
  if (lines[0].starts_with("\xEF\xBB\xBF")) lines[0].remove_prefix(3);

  std::map<std::string, std::size_t> col;
  {
    const auto header = split_csv_line(lines[0]);
    for (std::size_t i = 0; i < header.size(); ++i) col[lower(trim(header[i]))] = i;
  }
  std::vector<std::string> missing;
  for (const auto& m : mandatory_columns(schema)) {
    if (!col.contains(m)) missing.push_back(m);
  }
  const bool has_bmi = col.contains("bmi");
  const bool has_hw = col.contains("height_cm") && col.contains("weight_kg");
  if (!has_bmi && !has_hw) missing.emplace_back("bmi (or height_cm + weight_kg)");
  if (!missing.empty()) {
    std::string msg = "missing mandatory columns:";
    for (const auto& m : missing) msg += " " + m;
    throw SchemaError(msg);
  }
  if (schema == Source::Charls) {
    if (col.contains("race")) {
      out.report.warnings.emplace_back(
          "CHARLS file has a race column; race forced to OtherMulti for every record");
      col.erase("race");
    }
    if (col.contains("insulin_uu_ml")) {
      out.report.warnings.emplace_back("CHARLS file has an insulin column; ignored");
      col.erase("insulin_uu_ml");
    }
  }

  for (std::size_t li = 1; li < lines.size(); ++li) {
    ++out.report.rows_read;
    const auto cells = split_csv_line(lines[li]);
    std::size_t flags = 0;
    auto cell = [&](const std::string& name) -> std::optional<std::string_view> {
      const auto it = col.find(name);
      if (it == col.end()) return std::nullopt;
      if (it->second >= cells.size()) return std::string_view{};
      return std::string_view(cells[it->second]);
    };
    // Numeric cell; absent column -> nullopt silently, bad cell -> flagged.
    auto number = [&](const std::string& name, bool positive) -> std::optional<double> {
      const auto c = cell(name);
      if (!c) return std::nullopt;
      auto v = parse_number(*c);
      if (!v || (positive && *v <= 0.0) || *v < 0.0) {
        ++flags;
        return std::nullopt;
      }
      return v;
    };

    ParticipantRecord r;
    r.source = schema;
    r.id = std::string(trim(cell("id").value_or("")));
    if (r.id.empty()) {
      r.id = "row" + std::to_string(li);
      ++flags;
    }
    r.age = number("age", false);
    if (const auto c = cell("sex")) {
      r.sex = parse_sex(*c);
      if (!r.sex) ++flags;
    }
    if (schema == Source::Charls) {
      r.race = Race::OtherMulti;
    } else if (const auto c = cell("race")) {
      r.race = parse_race(*c);
      if (!r.race) ++flags;
    }
    r.height_cm = number("height_cm", true);
    r.weight_kg = number("weight_kg", true);
    r.bmi = number("bmi", true);
    if (!r.bmi && r.height_cm && r.weight_kg) r.bmi = irkit::bmi(*r.weight_kg, *r.height_cm);
    r.waist_cm = number("waist_cm", true);
    r.pulse = number("pulse", true);
    r.systolic = number("systolic", true);
    r.diastolic = number("diastolic", true);
    r.fpg_mg_dl = number("fpg_mg_dl", true);
    if (schema == Source::Nhanes) r.insulin_uU_ml = number("insulin_uu_ml", false);
    r.tg_mg_dl = number("tg_mg_dl", true);
    r.hdl_mg_dl = number("hdl_mg_dl", true);
    if (const auto c = cell("diabetes")) {
      const auto f = parse_flag(*c);
      if (f) {
        r.diabetes = *f;
      } else {
        ++flags;
      }
    }
    out.report.cells_flagged += flags;
    if (flags > 0) ++out.report.rows_flagged;
    out.records.push_back(std::move(r));
  }
  out.report.rows_kept = out.records.size();
  return out;
}

ParsedCsv parse_csv(const std::filesystem::path& path, Source schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_text(buf.str(), schema);
}

std::string to_csv_text(std::span<const ParticipantRecord> records) {
  std::ostringstream os;
  os << "id,age,sex,race,height_cm,weight_kg,bmi,waist_cm,pulse,systolic,diastolic,"
        "fpg_mg_dl,insulin_uU_ml,tg_mg_dl,hdl_mg_dl,diabetes\n";
  auto num = [&os](const std::optional<double>& v) {
    if (v) os << fmt_double(*v);
    os << ',';
  };
  for (const auto& r : records) {
    os << r.id << ',';
    num(r.age);
    if (r.sex) os << to_string(*r.sex);
    os << ',';
    if (r.race) os << to_string(*r.race);
    os << ',';
    num(r.height_cm);
    num(r.weight_kg);
    num(r.bmi);
    num(r.waist_cm);
    num(r.pulse);
    num(r.systolic);
    num(r.diastolic);
    num(r.fpg_mg_dl);
    num(r.insulin_uU_ml);
    num(r.tg_mg_dl);
    num(r.hdl_mg_dl);
    os << (r.diabetes ? 1 : 0) << '\n';
  }
  return os.str();
}

void write_csv(const std::filesystem::path& path, std::span<const ParticipantRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_csv_text(records);
}

// ---------------------------------------------------------------------------

std::optional<double> numeric_field(const ParticipantRecord& r, std::size_t s) {
  switch (static_cast<Feature>(s)) {
    case Feature::Age:
      return r.age;
    case Feature::Bmi:
      return r.bmi;
    case Feature::Waist:
      return r.waist_cm;
    case Feature::Pulse:
      return r.pulse;
    case Feature::Systolic:
      return r.systolic;
    case Feature::Diastolic:
      return r.diastolic;
    case Feature::Fpg:
      return r.fpg_mg_dl;
    default:
      throw DomainError("not a numeric feature slot");
  }
}

namespace {

bool has_field(const ParticipantRecord& r, const std::string& field) {
  if (field == "fpg_mg_dl") return r.fpg_mg_dl.has_value();
  if (field == "insulin_uU_ml") return r.insulin_uU_ml.has_value();
  if (field == "tg_mg_dl") return r.tg_mg_dl.has_value();
  if (field == "hdl_mg_dl") return r.hdl_mg_dl.has_value();
  if (field == "bmi") return r.bmi.has_value();
  return false;
}

}  // namespace

std::string ExclusionReport::to_json() const {
  json j;
  j["input"] = input;
  j["kept"] = kept;
  j["excluded"] = json::object();
  for (const auto& [reason, n] : excluded) j["excluded"][reason] = n;
  return j.dump(2);
}

ExclusionResult apply_exclusions(std::span<const ParticipantRecord> records, Task task,
                                 const FeatureMask& mask) {
  ExclusionResult out;
  out.report.input = records.size();
  const auto target_fields = required_target_fields(task);
  for (const auto& r : records) {
    std::optional<std::string> reason;
    if (!r.age) {
      reason = "missing:age";
    } else if (*r.age < 18.0) {
      reason = "age";
    } else if (r.diabetes) {
      reason = "diabetes";
    }
    if (!reason) {
      for (const auto& f : target_fields) {
        if (!has_field(r, f)) {
          reason = "missing:" + f;
          break;
        }
      }
    }
    if (!reason) {
      for (std::size_t s : mask.numeric_slots()) {
        if (!numeric_field(r, s)) {
          reason = "missing:" + std::string(feature_name(s));
          break;
        }
      }
    }
    if (!reason) {
      if (mask[slot(Feature::Sex)] && !r.sex) reason = "missing:sex";
      if (!reason && mask[slot(Feature::Race)] && !r.race) reason = "missing:race";
    }
    if (reason) {
      ++out.report.excluded[*reason];
    } else {
      out.kept.push_back(r);
    }
  }
  out.report.kept = out.kept.size();
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
    case Split::External:
      return "external";
  }
  return "?";
}

std::size_t SplitAssignment::count(Split s) const {
  return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), s));
}

std::map<std::string, Split> SplitAssignment::as_map() const {
  std::map<std::string, Split> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = splits[i];
  return m;
}

std::string SplitAssignment::manifest_csv() const {
  std::ostringstream os;
  os << "id,split\n";
  for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << ',' << to_string(splits[i]) << '\n';
  return os.str();
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  const double nd = static_cast<double>(n);
  std::size_t train = static_cast<std::size_t>(std::ceil(ratios.train * nd - 1e-9));
  train = std::min(train, n);
  std::size_t val = static_cast<std::size_t>(std::llround(ratios.val * nd));
  val = std::min(val, n - train);
  return {train, val, n - train - val};
}

SplitAssignment split(std::span<const ParticipantRecord> records, std::uint64_t seed,
                      const SplitRatios& ratios,
                      std::optional<std::span<const double>> stratify_labels) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  if (records.empty()) throw ConfigError("split: no records");
  if (stratify_labels && stratify_labels->size() != records.size()) {
    throw ConfigError("split: stratification labels do not match record count");
  }
  SplitAssignment a;
  a.seed = seed;
  a.ids.reserve(records.size());
  a.splits.assign(records.size(), Split::External);
  for (const auto& r : records) a.ids.push_back(r.id);

  // Groups of internal record indices: one group, or one per label value.
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].source == Source::Charls) continue;
    const double key = stratify_labels ? (*stratify_labels)[i] : 0.0;
    groups[key].push_back(i);
  }
  num::Rng rng(seed);
  for (auto& [key, idx] : groups) {
    rng.shuffle(std::span<std::size_t>(idx));
    const auto sizes = split_sizes(idx.size(), ratios);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      a.splits[idx[k]] = k < sizes[0]              ? Split::Train
                         : k < sizes[0] + sizes[1] ? Split::Val
                                                   : Split::Test;
    }
  }
  return a;
}

// ---------------------------------------------------------------------------

FeatureEncoder FeatureEncoder::fit(std::span<const ParticipantRecord> train,
                                   const FeatureMask& mask) {
  if (train.empty()) throw ConfigError("FeatureEncoder::fit: empty training set");
  FeatureEncoder enc;
  enc.mask_ = mask;
  for (std::size_t s = 0; s < kNumNumeric; ++s) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : train) {
      if (const auto v = numeric_field(r, s)) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) {
      enc.mean_[s] = 0.0;
      enc.std_[s] = 1.0;
      if (mask[s]) {
        enc.warnings_.push_back("feature " + std::string(feature_name(s)) +
                                " absent from training data");
      }
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : train) {
      if (const auto v = numeric_field(r, s)) ss += (*v - mean) * (*v - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    enc.mean_[s] = mean;
    if (sd > 0.0) {
      enc.std_[s] = sd;
    } else {
      enc.std_[s] = 1.0;
      if (mask[s]) {
        enc.warnings_.push_back("feature " + std::string(feature_name(s)) +
                                " has zero variance; std clamped to 1");
      }
    }
  }
  std::set<Sex> sexes;
  std::set<Race> races;
  for (const auto& r : train) {
    if (r.sex) sexes.insert(*r.sex);
    if (r.race) races.insert(*r.race);
  }
  races.insert(Race::OtherMulti);
  enc.sex_vocab_.assign(sexes.begin(), sexes.end());
  enc.race_vocab_.assign(races.begin(), races.end());
  return enc;
}

int FeatureEncoder::sex_code(Sex s) const {
  const auto it = std::find(sex_vocab_.begin(), sex_vocab_.end(), s);
  // Unseen values share the reserved trailing code.
  return static_cast<int>(it - sex_vocab_.begin());
}

int FeatureEncoder::race_code(Race r) const {
  auto it = std::find(race_vocab_.begin(), race_vocab_.end(), r);
  if (it == race_vocab_.end()) it = std::find(race_vocab_.begin(), race_vocab_.end(), Race::OtherMulti);
  return static_cast<int>(it - race_vocab_.begin());
}

std::optional<Sex> FeatureEncoder::decode_sex(int code) const {
  if (code < 0 || static_cast<std::size_t>(code) >= sex_vocab_.size()) return std::nullopt;
  return sex_vocab_[static_cast<std::size_t>(code)];
}

std::optional<Race> FeatureEncoder::decode_race(int code) const {
  if (code < 0 || static_cast<std::size_t>(code) >= race_vocab_.size()) return std::nullopt;
  return race_vocab_[static_cast<std::size_t>(code)];
}

std::size_t FeatureEncoder::vocab_size(std::size_t categorical_index) const {
  return categorical_index == 0 ? sex_vocab_.size() + 1 : race_vocab_.size();
}

FeatureVector FeatureEncoder::encode_raw(const ParticipantRecord& r) const {
  FeatureVector v;
  v.mask = mask_;
  for (std::size_t s = 0; s < kNumNumeric; ++s) {
    const auto x = numeric_field(r, s);
    if (mask_[s] && !x) {
      throw DomainError("record " + r.id + " is missing active feature " +
                        std::string(feature_name(s)));
    }
    // Inactive slots carry the training mean so standardisation maps them to 0.
    v.numeric[s] = (mask_[s] && x) ? *x : mean_[s];
  }
  v.categorical[0] = (mask_[slot(Feature::Sex)] && r.sex) ? sex_code(*r.sex) : 0;
  v.categorical[1] = (mask_[slot(Feature::Race)] && r.race) ? race_code(*r.race) : 0;
  if (mask_[slot(Feature::Sex)] && !r.sex) {
    throw DomainError("record " + r.id + " is missing active feature sex");
  }
  if (mask_[slot(Feature::Race)] && !r.race) {
    throw DomainError("record " + r.id + " is missing active feature race");
  }
  return v;
}

FeatureVector FeatureEncoder::standardize(const FeatureVector& raw) const {
  FeatureVector v = raw;
  for (std::size_t s = 0; s < kNumNumeric; ++s) {
    v.numeric[s] = mask_[s] ? (raw.numeric[s] - mean_[s]) / std_[s] : 0.0;
  }
  return v;
}

FeatureVector FeatureEncoder::encode(const ParticipantRecord& r) const {
  return standardize(encode_raw(r));
}

std::vector<FeatureVector> FeatureEncoder::encode_raw_all(
    std::span<const ParticipantRecord> rs) const {
  std::vector<FeatureVector> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(encode_raw(r));
  return out;
}

std::string FeatureEncoder::to_json() const {
  json j;
  j["mask"] = mask_.names();
  j["mean"] = mean_;
  j["std"] = std_;
  std::vector<std::string> sexes, races;
  for (Sex s : sex_vocab_) sexes.emplace_back(to_string(s));
  for (Race r : race_vocab_) races.emplace_back(to_string(r));
  j["sex_vocab"] = sexes;
  j["race_vocab"] = races;
  return j.dump();
}

FeatureEncoder FeatureEncoder::from_json(std::string_view text) {
  const json j = json::parse(text);
  FeatureEncoder enc;
  const auto names = j.at("mask").get<std::vector<std::string>>();
  enc.mask_ = FeatureMask::from_names(names);
  enc.mean_ = j.at("mean").get<std::array<double, kNumNumeric>>();
  enc.std_ = j.at("std").get<std::array<double, kNumNumeric>>();
  for (const auto& s : j.at("sex_vocab")) enc.sex_vocab_.push_back(*parse_sex(s.get<std::string>()));
  for (const auto& r : j.at("race_vocab")) {
    enc.race_vocab_.push_back(*parse_race(r.get<std::string>()));
  }
  return enc;
}

}  // namespace irkit
