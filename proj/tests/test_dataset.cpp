#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "irkit/dataset.hpp"
#include "irkit/errors.hpp"
#include "irkit/synthetic.hpp"
#include "json.hpp"

using namespace irkit;
using doctest::Approx;

namespace {

const char* kNhanesCsv =
    "id,age,sex,race,height_cm,weight_kg,bmi,waist_cm,pulse,systolic,diastolic,fpg_mg_dl,"
    "insulin_uU_ml,tg_mg_dl,hdl_mg_dl,diabetes\n"
    "a1,45,female,NonHispanicWhite,165,70,25.7,88,72,120,75,95,8.1,110,60,0\n"
    "a2,62,1,4,178,90,28.4,101,68,135,82,104,14.2,150,45,0\n"
    "a3,17,male,MexicanAmerican,170,65,22.5,80,80,110,70,90,6.0,80,55,no\n";

ParticipantRecord complete_record(const std::string& id) {
  ParticipantRecord r;
  r.id = id;
  r.age = 40;
  r.sex = Sex::Female;
  r.race = Race::NonHispanicWhite;
  r.bmi = 28.41;
  r.waist_cm = 95;
  r.pulse = 70;
  r.systolic = 120;
  r.diastolic = 70;
  r.fpg_mg_dl = 100;
  r.insulin_uU_ml = 10;
  r.tg_mg_dl = 117;
  r.hdl_mg_dl = 54.58;
  return r;
}

}  // namespace

TEST_CASE("parse_csv: well-formed NHANES file") {
  const auto parsed = parse_csv_text(kNhanesCsv, Source::Nhanes);
  REQUIRE(parsed.records.size() == 3);
  CHECK(parsed.report.rows_read == 3);
  CHECK(parsed.report.cells_flagged == 0);
  CHECK(parsed.records[1].sex == Sex::Male);
  CHECK(parsed.records[1].race == Race::NonHispanicBlack);
  CHECK(parsed.records[0].insulin_uU_ml == Approx(8.1));
  CHECK(parsed.records[2].age == Approx(17));
}

TEST_CASE("parse_csv: empty cell becomes missing and is flagged") {
  const std::string text =
      "id,age,sex,race,bmi,fpg_mg_dl,tg_mg_dl,hdl_mg_dl,diabetes\n"
      "b1,50,female,OtherMulti,27,,120,50,0\n";
  const auto parsed = parse_csv_text(text, Source::Nhanes);
  REQUIRE(parsed.records.size() == 1);
  CHECK_FALSE(parsed.records[0].fpg_mg_dl.has_value());
  CHECK(parsed.report.cells_flagged == 1);
  CHECK(parsed.report.rows_flagged == 1);
}

TEST_CASE("parse_csv: BMI derived from height and weight when the column is absent") {
  const std::string text =
      "id,age,sex,race,height_cm,weight_kg,fpg_mg_dl,tg_mg_dl,hdl_mg_dl,diabetes\n"
      "h1,30,male,OtherMulti,180,81,90,100,50,0\n";
  const auto parsed = parse_csv_text(text, Source::Nhanes);
  CHECK(*parsed.records[0].bmi == Approx(25.0));
}

TEST_CASE("parse_csv: CHARLS race column is overridden") {
  const std::string text =
      "id,age,sex,race,bmi,fpg_mg_dl,tg_mg_dl,hdl_mg_dl,diabetes\n"
      "c1,60,female,NonHispanicWhite,23,94,136,51,0\n";
  const auto parsed = parse_csv_text(text, Source::Charls);
  CHECK(parsed.records[0].race == Race::OtherMulti);
  CHECK_FALSE(parsed.records[0].insulin_uU_ml.has_value());
  CHECK(parsed.report.warnings.size() == 1);
}

TEST_CASE("parse_csv: schema errors") {
  CHECK_THROWS_AS(parse_csv_text("", Source::Nhanes), SchemaError);
  try {
    parse_csv_text("id,age,sex\n1,40,male\n", Source::Nhanes);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("race") != std::string::npos);
    CHECK(msg.find("hdl_mg_dl") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("/nonexistent/file.csv", Source::Nhanes), SchemaError);
}

TEST_CASE("csv writer round-trips through the parser") {
  const auto cohort = synth::generate_cohort({.n = 20, .seed = 3});
  const auto parsed = parse_csv_text(to_csv_text(cohort), Source::Nhanes);
  REQUIRE(parsed.records.size() == 20);
  CHECK(parsed.report.cells_flagged == 0);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(parsed.records[i].id == cohort[i].id);
    CHECK(*parsed.records[i].tg_mg_dl == *cohort[i].tg_mg_dl);
    CHECK(parsed.records[i].race == cohort[i].race);
  }
}

TEST_CASE("apply_exclusions: reasons") {
  auto minor = complete_record("m");
  minor.age = 17;
  auto diabetic = complete_record("d");
  diabetic.diabetes = true;
  auto charls = complete_record("c");
  charls.source = Source::Charls;
  charls.race = Race::OtherMulti;
  charls.insulin_uU_ml.reset();
  const std::vector<ParticipantRecord> rs{minor, diabetic, charls};

  const auto mets = apply_exclusions(rs, Task::MetsClass);
  CHECK(mets.report.excluded.at("age") == 1);
  CHECK(mets.report.excluded.at("diabetes") == 1);
  REQUIRE(mets.kept.size() == 1);
  CHECK(mets.kept[0].id == "c");

  const auto homa = apply_exclusions(rs, Task::HomaClass);
  CHECK(homa.kept.empty());
  CHECK(homa.report.excluded.at("missing:insulin_uU_ml") == 1);

  const auto j = nlohmann::json::parse(homa.report.to_json());
  CHECK(j["input"] == 3);
  CHECK(j["excluded"]["age"] == 1);
}

TEST_CASE("apply_exclusions: masked-in features are required, masked-out are not") {
  auto r = complete_record("w");
  r.waist_cm.reset();
  const std::vector<ParticipantRecord> rs{r};
  CHECK(apply_exclusions(rs, Task::MetsClass, FeatureMask::full()).kept.empty());
  CHECK(apply_exclusions(rs, Task::MetsClass, FeatureMask::simplified()).kept.size() == 1);
}

TEST_CASE("property: exclusions are idempotent and leave required fields present") {
  const auto cohort = synth::generate_cohort(
      {.n = 600, .seed = 9, .ineligible_fraction = 0.1, .missing_lab_fraction = 0.1});
  for (Task t : kAllTasks) {
    const auto once = apply_exclusions(cohort, t);
    const auto twice = apply_exclusions(once.kept, t);
    CHECK(twice.kept.size() == once.kept.size());
    CHECK(twice.report.excluded.empty());
    for (const auto& r : once.kept) {
      if (t == Task::HomaClass) {
        CHECK(r.insulin_uU_ml.has_value());
      } else {
        CHECK(r.tg_mg_dl.has_value());
        if (index_kind(t) == IndexKind::MetsIr) CHECK(r.hdl_mg_dl.has_value());
      }
    }
  }
}

TEST_CASE("derive_target") {
  ParticipantRecord r = complete_record("t");
  CHECK(derive_target(r, Task::MetsClass) == 0.0);
  CHECK(derive_target(r, Task::MetsRegress) == Approx(40.91).epsilon(1e-4));
  r.fpg_mg_dl = 90.0;  // 5.0 mmol/L
  r.insulin_uU_ml = 11.25;
  CHECK(derive_target(r, Task::HomaClass) == 0.0);
  r.insulin_uU_ml = 11.26;
  CHECK(derive_target(r, Task::HomaClass) == 1.0);
  r.hdl_mg_dl.reset();
  try {
    derive_target(r, Task::MetsRegress);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("hdl_mg_dl") != std::string::npos);
  }
}

TEST_CASE("split sizes follow the ceil/round rule") {
  const auto big = split_sizes(22008, {});
  CHECK(big[0] == 13205);
  CHECK(big[1] == 4402);
  CHECK(big[2] == 4401);
  const auto small = split_sizes(10, {});
  CHECK(small[0] == 6);
  CHECK(small[1] == 2);
  CHECK(small[2] == 2);
}

TEST_CASE("split: deterministic, disjoint, exhaustive; CHARLS external") {
  auto nh = synth::generate_cohort({.n = 500, .seed = 1});
  const auto ch = synth::generate_cohort({.n = 50, .source = Source::Charls, .seed = 2});
  nh.insert(nh.end(), ch.begin(), ch.end());
  const auto a = split(nh, 77);
  const auto b = split(nh, 77);
  const auto c = split(nh, 78);
  CHECK(a.splits == b.splits);
  CHECK(a.splits != c.splits);
  CHECK(a.count(Split::Train) == 300);
  CHECK(a.count(Split::Val) == 100);
  CHECK(a.count(Split::Test) == 100);
  CHECK(a.count(Split::External) == 50);
  CHECK(a.ids.size() == nh.size());
  const std::set<std::string> unique(a.ids.begin(), a.ids.end());
  CHECK(unique.size() == nh.size());
  for (std::size_t i = 500; i < nh.size(); ++i) CHECK(a.splits[i] == Split::External);
  CHECK(a.manifest_csv().starts_with("id,split\nN"));
}

TEST_CASE("split: stratified keeps class proportions and ratio misuse is rejected") {
  const auto nh = synth::generate_cohort({.n = 400, .seed = 5});
  std::vector<double> labels;
  for (const auto& r : nh) labels.push_back(derive_target(r, Task::MetsClass));
  const auto a = split(nh, 3, {}, std::span<const double>(labels));
  std::size_t pos_train = 0, pos = 0;
  for (std::size_t i = 0; i < nh.size(); ++i) {
    pos += labels[i] > 0.5;
    pos_train += labels[i] > 0.5 && a.splits[i] == Split::Train;
  }
  CHECK(std::abs(static_cast<double>(pos_train) - 0.6 * static_cast<double>(pos)) <= 1.0);
  CHECK_THROWS_AS(split(nh, 1, {0.5, 0.2, 0.2}), ConfigError);
  CHECK_THROWS_AS(split(std::span<const ParticipantRecord>{}, 1), ConfigError);
}

TEST_CASE("encoder: z-scores with population std, categorical round trip") {
  ParticipantRecord a = complete_record("a"), b = complete_record("b");
  a.age = 1;
  b.age = 3;
  a.sex = Sex::Male;
  b.race = Race::MexicanAmerican;
  const std::vector<ParticipantRecord> train{a, b};
  const auto enc = FeatureEncoder::fit(train);
  ParticipantRecord q = complete_record("q");
  q.age = 3;
  CHECK(enc.encode(q).numeric[slot(Feature::Age)] == Approx(1.0));
  q.age = 2;
  CHECK(enc.encode(q).numeric[slot(Feature::Age)] == Approx(0.0));
  // bmi has zero variance in train: clamped std with warning
  CHECK(enc.stds()[slot(Feature::Bmi)] == 1.0);
  CHECK_FALSE(enc.warnings().empty());

  for (Sex s : {Sex::Male, Sex::Female}) CHECK(enc.decode_sex(enc.sex_code(s)) == s);
  for (Race r : {Race::MexicanAmerican, Race::NonHispanicWhite, Race::OtherMulti}) {
    CHECK(enc.decode_race(enc.race_code(r)) == r);
  }
  // unseen race maps to the OtherMulti code
  CHECK(enc.race_code(Race::NonHispanicBlack) == enc.race_code(Race::OtherMulti));

  const auto back = FeatureEncoder::from_json(enc.to_json());
  CHECK(back.encode(q).numeric == enc.encode(q).numeric);
  CHECK(back.encode(q).categorical == enc.encode(q).categorical);
}

TEST_CASE("encoder: unseen sex uses the reserved code") {
  ParticipantRecord a = complete_record("a");
  const std::vector<ParticipantRecord> train{a};
  const auto enc = FeatureEncoder::fit(train);
  CHECK(enc.vocab_size(0) == 2);
  CHECK(enc.sex_code(Sex::Male) == 1);
  CHECK_FALSE(enc.decode_sex(1).has_value());
}

TEST_CASE("encoder: simplified mask keeps two active slots") {
  const auto cohort = synth::generate_cohort({.n = 50, .seed = 4});
  const auto enc = FeatureEncoder::fit(cohort, FeatureMask::simplified());
  const auto v = enc.encode(cohort[0]);
  CHECK(v.mask.count() == 2);
  CHECK(kNumFeatures - v.mask.count() == 7);
  CHECK(v.numeric[slot(Feature::Age)] == 0.0);
  CHECK(v.mask.names() == std::vector<std::string>{"bmi", "fpg"});
}

TEST_CASE("synthetic cohort resembles the development cohort") {
  const auto cohort = synth::generate_cohort({.n = 5000, .seed = 11});
  double mets = 0, pos = 0;
  for (const auto& r : cohort) {
    const double m = derive_target(r, Task::MetsRegress);
    mets += m;
    pos += m > kMetsIrThreshold;
  }
  mets /= 5000.0;
  CHECK(mets > 36.0);
  CHECK(mets < 46.0);
  CHECK(pos / 5000.0 > 0.3);
  CHECK(pos / 5000.0 < 0.7);
  CHECK(apply_exclusions(cohort, Task::HomaClass).kept.size() == 5000);
}
