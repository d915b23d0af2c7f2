#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "irkit/errors.hpp"
#include "irkit/harness/experiment.hpp"
#include "irkit/harness/metrics.hpp"
#include "irkit/harness/model.hpp"
#include "irkit/harness/optim.hpp"
#include "irkit/numcore/rng.hpp"
#include "irkit/synthetic.hpp"
#include "oracles.hpp"

using namespace irkit;
using namespace irkit::harness;

namespace {

struct Labeled {
  std::vector<double> scores;
  std::vector<double> labels;
  std::vector<int> int_labels;
};

// Random scored set with both classes; `levels` > 0 quantises scores to
// force ties.
Labeled random_labeled(num::Rng& rng, std::size_t n, int levels) {
  Labeled d;
  while (true) {
    d = {};
    for (std::size_t i = 0; i < n; ++i) {
      const int y = rng.uniform() < 0.4 ? 1 : 0;
      double s = rng.uniform() + 0.3 * y;
      if (levels > 0) s = std::floor(s * levels) / levels;
      d.scores.push_back(s);
      d.labels.push_back(y);
      d.int_labels.push_back(y);
    }
    const auto pos = std::count(d.int_labels.begin(), d.int_labels.end(), 1);
    if (pos > 0 && pos < static_cast<long>(n)) return d;
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("irkit_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Two numeric features, class = sign of a linear score: separable.
struct Separable {
  FeatureEncoder encoder;
  TaskData train, val;
  FeatureMask mask;
};

Separable separable_data(std::uint64_t seed, std::size_t n_train, std::size_t n_val) {
  Separable s;
  s.mask = FeatureMask::from_names(std::vector<std::string>{"age", "bmi"});
  num::Rng rng(seed);
  std::vector<ParticipantRecord> recs;
  for (std::size_t i = 0; i < n_train + n_val; ++i) {
    ParticipantRecord r;
    r.id = "S" + std::to_string(i);
    r.age = rng.uniform(20.0, 80.0);
    r.bmi = rng.uniform(18.0, 40.0);
    recs.push_back(r);
  }
  s.encoder = FeatureEncoder::fit(std::span(recs).first(n_train), s.mask);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    TaskData& d = i < n_train ? s.train : s.val;
    d.ids.push_back(recs[i].id);
    d.x.push_back(s.encoder.encode_raw(recs[i]));
    d.y.push_back((*recs[i].age - 50.0) + 2.0 * (*recs[i].bmi - 29.0) > 0.0 ? 1.0 : 0.0);
  }
  return s;
}

TrainConfig small_net_config(ModelKind kind, Task task, const FeatureMask& mask) {
  TrainConfig c;
  c.task = task;
  c.model = kind;
  c.mask = mask;
  c.seed = 11;
  c.batch_size = 64;
  c.max_epochs = 5;
  c.patience = 5;
  c.net.dim = 8;
  c.net.heads = 2;
  c.net.layers = 1;
  c.net.hidden = 8;
  c.net.ffn_mult = 2;
  c.net.grid.size = 4;
  c.optimizer = OptimizerConfig{};
  return c;
}

struct Cohort {
  std::vector<ParticipantRecord> train, val, test;
  FeatureEncoder encoder;
};

Cohort synthetic_cohort(Task task, std::size_t n, std::uint64_t seed) {
  synth::CohortOptions o;
  o.n = n;
  o.seed = seed;
  const auto kept = apply_exclusions(synth::generate_cohort(o), task).kept;
  const auto sa = split(kept, seed);
  Cohort c;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    (sa.splits[i] == Split::Train ? c.train : sa.splits[i] == Split::Val ? c.val : c.test)
        .push_back(kept[i]);
  }
  c.encoder = FeatureEncoder::fit(c.train);
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// AUC

TEST_CASE("auc: documented examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8}, y{0, 0, 1, 1};
  CHECK(auc(s, y) == 0.75);
  const std::vector<double> perfect{0.1, 0.2, 0.8, 0.9};
  CHECK(auc(perfect, y) == 1.0);
  const std::vector<double> flat(4, 0.3);
  CHECK(auc(flat, y) == 0.5);
}

TEST_CASE("auc: errors") {
  const std::vector<double> s{0.1, 0.2, 0.3};
  CHECK_THROWS_AS(auc(s, std::vector<double>{1, 1, 1}), UndefinedMetric);
  CHECK_THROWS_AS(auc(s, std::vector<double>{0, 0, 0}), UndefinedMetric);
  CHECK_THROWS_AS(auc(s, std::vector<double>{0, 2, 1}), DomainError);
  CHECK_THROWS_AS(auc(s, std::vector<double>{0, 1}), ShapeError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, NAN, 0.3}, std::vector<double>{0, 1, 1}), DomainError);
}

TEST_CASE("auc: equals exhaustive pair counting exactly, with and without ties") {
  num::Rng rng(5);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    const int levels = trial % 3 == 0 ? 0 : (trial % 3 == 1 ? 4 : 20);
    const auto d = random_labeled(rng, n, levels);
    const auto [twice, pairs] = oracle::auc_pairs_exact(d.scores, d.int_labels);
    CHECK(auc(d.scores, d.labels) == static_cast<double>(twice) / static_cast<double>(2 * pairs));
  }
}

TEST_CASE("auc: invariant under strictly increasing score transforms") {
  num::Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto d = random_labeled(rng, 60, trial % 2 ? 10 : 0);
    const double a = auc(d.scores, d.labels);
    for (double& s : d.scores) s = std::exp(3.0 * s) - 7.0;
    CHECK(auc(d.scores, d.labels) == a);
  }
}

// ---------------------------------------------------------------------------
// Classification report

TEST_CASE("classification_report: perfect classifier") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9}, y{0, 0, 1, 1};
  const auto m = classification_report(s, y);
  CHECK(m.auc == 1.0);
  CHECK(m.acc == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.undefined.empty());
}

TEST_CASE("classification_report: all-negative predictions flag precision") {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4}, y{0, 1, 0, 1};
  const auto m = classification_report(s, y);
  CHECK(m.acc == 0.5);
  CHECK(m.recall == 0.0);
  CHECK(m.precision == 0.0);
  CHECK(std::find(m.undefined.begin(), m.undefined.end(), "precision") != m.undefined.end());
}

TEST_CASE("classification_report: hand confusion matrix TP3 FP1 FN1 TN5") {
  // threshold 0.5; scores >= 0.5 are positive
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.1, 0.2, 0.3, 0.4};
  const std::vector<double> y{1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  const auto m = classification_report(s, y);
  CHECK(m.confusion.tp == 3);
  CHECK(m.confusion.fp == 1);
  CHECK(m.confusion.fn == 1);
  CHECK(m.confusion.tn == 5);
  CHECK(m.precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.recall == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.f1 == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.acc == doctest::Approx(0.8).epsilon(1e-15));

  const auto macro = classification_report(s, y, 0.5, Averaging::Macro);
  // negative class: precision 5/6, recall 5/6
  CHECK(macro.precision == doctest::Approx((0.75 + 5.0 / 6.0) / 2).epsilon(1e-14));
  CHECK(macro.recall == doctest::Approx((0.75 + 5.0 / 6.0) / 2).epsilon(1e-14));
  CHECK(macro.f1 == doctest::Approx((0.75 + 5.0 / 6.0) / 2).epsilon(1e-14));
  CHECK(macro.acc == m.acc);
}

TEST_CASE("classification_report: threshold boundary counts as positive") {
  const std::vector<double> s{0.5, 0.49}, y{1, 0};
  const auto m = classification_report(s, y);
  CHECK(m.confusion.tp == 1);
  CHECK(m.confusion.tn == 1);
}

TEST_CASE("classification_report: properties on random sets") {
  num::Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = random_labeled(rng, 5 + rng.below(150), trial % 4 == 0 ? 5 : 0);
    const double thr = rng.uniform(0.2, 1.0);
    const auto m = classification_report(d.scores, d.labels, thr);
    const auto& c = m.confusion;
    CHECK(c.tp + c.fp + c.tn + c.fn == d.scores.size());
    CHECK(m.acc == static_cast<double>(c.tp + c.tn) / static_cast<double>(d.scores.size()));
    for (double v : {m.auc, m.acc, m.f1, m.precision, m.recall}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (m.precision + m.recall > 0) {
      CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)).epsilon(1e-14));
    }
  }
}

TEST_CASE("averaging names round trip") {
  CHECK(parse_averaging(to_string(Averaging::Macro)) == Averaging::Macro);
  CHECK(parse_averaging("binary") == Averaging::BinaryPositive);
  CHECK_THROWS_AS(parse_averaging("micro"), ConfigError);
}

// ---------------------------------------------------------------------------
// Regression report

TEST_CASE("regression_report: documented examples") {
  const std::vector<double> t{2, 4};
  const auto exact = regression_report(t, t);
  CHECK(exact.mae == 0.0);
  CHECK(exact.rmse == 0.0);
  CHECK(exact.r2 == 1.0);

  const std::vector<double> mean{3, 3};
  CHECK(regression_report(mean, t).r2 == 0.0);

  const std::vector<double> p{1, 2};
  const auto m = regression_report(p, t);
  CHECK(m.mae == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(1.5811).epsilon(1e-4));
  CHECK(m.r2 == doctest::Approx(-1.5).epsilon(1e-15));
}

TEST_CASE("regression_report: errors") {
  CHECK_THROWS_AS(regression_report(std::vector<double>{1, 2}, std::vector<double>{3, 3}), UndefinedMetric);
  CHECK_THROWS_AS(regression_report(std::vector<double>{1}, std::vector<double>{3, 3}), ShapeError);
  CHECK_THROWS_AS(regression_report(std::vector<double>{}, std::vector<double>{}), DomainError);
}

TEST_CASE("regression_report: rmse >= mae and r2 <= 1, with equality only for exact fits") {
  num::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(50);
    std::vector<double> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.normal(40, 8);
      p[i] = trial % 10 == 0 ? t[i] : t[i] + rng.normal(0, 3);
    }
    const auto m = regression_report(p, t);
    CHECK(m.rmse >= m.mae);
    CHECK(m.mae >= 0.0);
    CHECK(m.r2 <= 1.0);
    CHECK((m.r2 == 1.0) == (p == t));
  }
}

// ---------------------------------------------------------------------------
// ROC

TEST_CASE("roc_points: perfect scores pass through (0,1)") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9}, y{0, 0, 1, 1};
  const auto pts = roc_points(s, y);
  CHECK(pts.front().fpr == 0.0);
  CHECK(pts.front().tpr == 0.0);
  CHECK(pts.back().fpr == 1.0);
  CHECK(pts.back().tpr == 1.0);
  CHECK(std::any_of(pts.begin(), pts.end(), [](const RocPoint& p) { return p.fpr == 0.0 && p.tpr == 1.0; }));
}

TEST_CASE("roc_points: trapezoid area equals auc on random sets; reversed gives 1 - auc") {
  num::Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto d = random_labeled(rng, 2 + rng.below(199), trial % 2 ? 8 : 0);
    const auto pts = roc_points(d.scores, d.labels);
    const double a = auc(d.scores, d.labels);
    CHECK(std::abs(trapezoid_area(pts) - a) < 1e-12);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].fpr >= pts[i - 1].fpr);
      CHECK(pts[i].tpr >= pts[i - 1].tpr);
      CHECK(pts[i].threshold < pts[i - 1].threshold);
    }
    for (double& s : d.scores) s = -s;
    CHECK(std::abs(trapezoid_area(roc_points(d.scores, d.labels)) - (1.0 - a)) < 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Optimizers

TEST_CASE("sgd: single step on a quadratic matches the closed form") {
  // f(w) = 0.5 * a * (w - c)^2, grad = a * (w - c)
  const double a = 3.0, c = 1.5, w0 = -2.0, lr = 1e-4;
  std::vector<num::Parameter> ps{num::Parameter("w", num::Matrix(1, 1, w0))};
  ps[0].grad(0, 0) = a * (w0 - c);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Sgd;
  oc.lr = lr;
  Optimizer opt(oc);
  opt.step(ps);
  CHECK(ps[0].value(0, 0) == doctest::Approx(w0 - lr * a * (w0 - c)).epsilon(1e-15));
}

TEST_CASE("adamw: first step on a quadratic matches the closed form") {
  const double a = 3.0, c = 1.5, w0 = -2.0;
  OptimizerConfig oc;  // AdamW defaults
  std::vector<num::Parameter> ps{num::Parameter("w", num::Matrix(1, 1, w0))};
  const double g = a * (w0 - c);
  ps[0].grad(0, 0) = g;
  Optimizer opt(oc);
  opt.step(ps);
  // bias-corrected moments equal g and g^2 on the first step
  const double expected = w0 * (1 - oc.lr * oc.weight_decay) - oc.lr * g / (std::abs(g) + oc.eps);
  CHECK(ps[0].value(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("adamw: three steps match a hand iteration") {
  const double a = 0.7, c = -0.4;
  OptimizerConfig oc;
  oc.lr = 0.05;
  oc.weight_decay = 0.1;
  std::vector<num::Parameter> ps{num::Parameter("w", num::Matrix(1, 1, 2.0))};
  Optimizer opt(oc);
  double w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = a * (w - c);
    ps[0].grad(0, 0) = a * (ps[0].value(0, 0) - c);
    opt.step(ps);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w = w - oc.lr * oc.weight_decay * w - oc.lr * mh / (std::sqrt(vh) + oc.eps);
    CHECK(ps[0].value(0, 0) == doctest::Approx(w).epsilon(1e-13));
  }
  CHECK(opt.steps() == 3);
}

TEST_CASE("optimizer: frozen parameters are untouched") {
  std::vector<num::Parameter> ps{num::Parameter("a", num::Matrix(1, 2, 1.0)),
                                 num::Parameter("b", num::Matrix(1, 2, 1.0))};
  ps[1].frozen = true;
  for (auto& p : ps) p.grad.fill(0.5);
  Optimizer opt(OptimizerConfig{});
  opt.step(ps);
  CHECK(ps[0].value(0, 0) != 1.0);
  CHECK(ps[1].value(0, 0) == 1.0);
  CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

// ---------------------------------------------------------------------------
// Training

TEST_CASE("train config: loss pairing and default optimizers") {
  TrainConfig c;
  c.task = Task::MetsClass;
  CHECK(c.loss() == LossKind::CrossEntropy);
  CHECK(c.effective_optimizer().kind == OptimizerKind::AdamW);
  CHECK(c.effective_optimizer().lr == 1e-3);
  c.task = Task::MetsRegress;
  CHECK(c.loss() == LossKind::MeanSquaredError);
  CHECK(c.effective_optimizer().kind == OptimizerKind::Sgd);
  CHECK(c.effective_optimizer().lr == 1e-4);
  CHECK(c.batch_size == 256);
  CHECK(c.max_epochs == 500);
  CHECK(c.patience == 20);
}

TEST_CASE("model names round trip") {
  for (ModelKind k : kAllModels) CHECK(parse_model(to_string(k)) == k);
  CHECK(display_name(ModelKind::Linear, Task::MetsClass) == "Logistic Regression");
  CHECK(display_name(ModelKind::Linear, Task::MetsRegress) == "Linear Regression");
  CHECK_THROWS_AS(parse_model("svm"), ConfigError);
}

TEST_CASE("logistic regression on separable 2-D data reaches val AUC > 0.99 within 200 epochs") {
  const auto d = separable_data(4, 400, 200);
  TrainConfig c;
  c.task = Task::MetsClass;
  c.model = ModelKind::Linear;
  c.mask = d.mask;
  const auto res = train(c, d.encoder, d.train, d.val);
  CHECK(res.history.epochs <= 200);
  CHECK(auc(res.model.predict(d.val.x), d.val.y) > 0.99);
}

TEST_CASE("linear regression recovers an exact linear target") {
  const auto d0 = separable_data(6, 300, 100);
  TaskData tr = d0.train, va = d0.val;
  for (auto* t : {&tr, &va}) {
    for (std::size_t i = 0; i < t->size(); ++i) t->y[i] = 2.0 + 0.5 * t->x[i].numeric[0] - 1.25 * t->x[i].numeric[1];
  }
  TrainConfig c;
  c.task = Task::MetsRegress;
  c.model = ModelKind::Linear;
  c.mask = d0.mask;
  c.ridge = 0.0;
  const auto res = train(c, d0.encoder, tr, va);
  const auto p = res.model.predict(va.x);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(va.y[i]).epsilon(1e-9));
}

TEST_CASE("patience 0 trains exactly one epoch") {
  const auto d = separable_data(9, 200, 100);
  auto c = small_net_config(ModelKind::Mlp, Task::MetsClass, d.mask);
  c.patience = 0;
  c.max_epochs = 50;
  const auto res = train(c, d.encoder, d.train, d.val);
  CHECK(res.history.epochs == 1);
  CHECK(res.history.train_loss.size() == 1);
  CHECK(res.history.best_epoch == 1);
}

TEST_CASE("networks return the best validation checkpoint") {
  const auto d = separable_data(10, 300, 150);
  auto c = small_net_config(ModelKind::Mlp, Task::MetsClass, d.mask);
  c.max_epochs = 8;
  c.patience = 8;
  const auto res = train(c, d.encoder, d.train, d.val);
  REQUIRE(res.history.val_metric.size() == res.history.epochs);
  const double best = *std::max_element(res.history.val_metric.begin(), res.history.val_metric.end());
  CHECK(auc(res.model.predict(d.val.x), d.val.y) == best);
  CHECK(res.history.val_metric[res.history.best_epoch - 1] == best);
}

TEST_CASE("divergence aborts with a numeric fault naming the epoch") {
  const auto d = separable_data(12, 200, 50);
  TaskData tr = d.train, va = d.val;
  for (auto* t : {&tr, &va}) {
    for (std::size_t i = 0; i < t->size(); ++i) t->y[i] = 1e3 * t->x[i].numeric[0];
  }
  auto c = small_net_config(ModelKind::Mlp, Task::MetsRegress, d.mask);
  c.standardize_target = false;
  OptimizerConfig o;
  o.kind = OptimizerKind::Sgd;
  o.lr = 1e6;
  c.optimizer = o;
  c.max_epochs = 50;
  try {
    train(c, d.encoder, tr, va);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("training is bit-reproducible and bundles round trip for every model kind") {
  const auto co = synthetic_cohort(Task::MetsClass, 500, 31);
  const auto tr = prepare(co.train, Task::MetsClass, co.encoder);
  const auto va = prepare(co.val, Task::MetsClass, co.encoder);
  const auto te = prepare(co.test, Task::MetsClass, co.encoder);
  for (ModelKind k : kAllModels) {
    CAPTURE(to_string(k));
    auto c = small_net_config(k, Task::MetsClass, FeatureMask::full());
    c.max_epochs = 2;
    c.gbdt.n_trees = 15;
    c.forest.n_trees = 8;
    const auto a = train(c, co.encoder, tr, va);
    const auto b = train(c, co.encoder, tr, va);
    const auto pa = a.model.predict(te.x);
    CHECK(pa == b.model.predict(te.x));
    for (double p : pa) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    const auto dir = scratch(std::string("bundle_") + std::string(to_string(k)));
    a.model.save(dir);
    const Model loaded = Model::load(dir);
    CHECK(loaded.kind == k);
    CHECK(loaded.predict(te.x) == pa);
    CHECK(loaded.predict_records(co.test) == pa);
    const auto dir2 = scratch(std::string("bundle2_") + std::string(to_string(k)));
    b.model.save(dir2);
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      CHECK(slurp(e.path()) == slurp(dir2 / e.path().filename()));
    }
  }
}

TEST_CASE("regression networks map standardised outputs back to target units") {
  const auto co = synthetic_cohort(Task::MetsRegress, 400, 32);
  const auto tr = prepare(co.train, Task::MetsRegress, co.encoder);
  const auto va = prepare(co.val, Task::MetsRegress, co.encoder);
  auto c = small_net_config(ModelKind::Mlp, Task::MetsRegress, FeatureMask::full());
  c.max_epochs = 60;
  c.patience = 60;
  c.optimizer = OptimizerConfig{OptimizerKind::AdamW, 1e-2};
  const auto res = train(c, co.encoder, tr, va);
  CHECK(res.model.target_mean == doctest::Approx(std::accumulate(tr.y.begin(), tr.y.end(), 0.0) / tr.size()));
  const auto p = res.model.predict(va.x);
  const double mean_p = std::accumulate(p.begin(), p.end(), 0.0) / p.size();
  CHECK(std::abs(mean_p - res.model.target_mean) < 3.0);
  CHECK(regression_report(p, va.y).r2 > 0.5);
}

TEST_CASE("train rejects a mask that differs from the encoder's") {
  const auto d = separable_data(13, 50, 20);
  TrainConfig c;
  c.model = ModelKind::Linear;
  c.mask = FeatureMask::full();
  CHECK_THROWS_AS(train(c, d.encoder, d.train, d.val), ConfigError);
}

// ---------------------------------------------------------------------------
// Fingerprints

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("fingerprint changes iff the relevant config or data changes") {
  TrainConfig c;
  c.model = ModelKind::Mlp;
  const std::string base = fingerprint(c, "data-1");
  CHECK(fingerprint(c, "data-1") == base);
  CHECK(fingerprint(c, "data-2") != base);
  TrainConfig d = c;
  d.seed += 1;
  CHECK(fingerprint(d, "data-1") != base);
  d = c;
  d.optimizer = OptimizerConfig{OptimizerKind::AdamW, 2e-3};
  CHECK(fingerprint(d, "data-1") != base);
  d = c;
  d.optimizer = OptimizerConfig{};  // equal to the task default
  CHECK(fingerprint(d, "data-1") == base);
  d = c;
  d.gbdt.n_trees = 7;  // not used by networks
  CHECK(fingerprint(d, "data-1") == base);
  d = c;
  d.model = ModelKind::Catboost;
  CHECK(fingerprint(d, "data-1") != base);
  TrainConfig e = d;
  e.gbdt.n_trees = 7;
  CHECK(fingerprint(e, "data-1") != fingerprint(d, "data-1"));
}

// ---------------------------------------------------------------------------
// Group summaries

TEST_CASE("group_summary: a single group equals the overall metrics") {
  const auto co = synthetic_cohort(Task::MetsClass, 300, 41);
  std::vector<double> preds;
  num::Rng rng(2);
  std::vector<double> ys;
  for (const auto& r : co.test) {
    ys.push_back(derive_target(r, Task::MetsClass));
    preds.push_back(0.6 * ys.back() + 0.5 * rng.uniform());
  }
  const auto g = group_summary(co.test, Grouping::All, Task::MetsClass, preds);
  REQUIRE(g.groups.size() == 1);
  CHECK(g.groups[0].count == co.test.size());
  REQUIRE(g.groups[0].cls);
  const auto overall = classification_report(preds, ys);
  CHECK(g.groups[0].cls->auc == overall.auc);
  CHECK(g.groups[0].cls->f1 == overall.f1);
}

TEST_CASE("group_summary: races with no members are omitted with a warning") {
  auto co = synthetic_cohort(Task::MetsRegress, 200, 42);
  for (auto& r : co.test) r.race = r.race == Race::OtherMulti ? Race::NonHispanicWhite : r.race;
  std::vector<double> preds;
  for (const auto& r : co.test) preds.push_back(derive_target(r, Task::MetsRegress) + 1.0);
  const auto g = group_summary(co.test, Grouping::Race, Task::MetsRegress, preds);
  for (const auto& s : g.groups) CHECK(s.name != "OtherMulti");
  CHECK(std::any_of(g.warnings.begin(), g.warnings.end(),
                    [](const std::string& w) { return w.find("OtherMulti") != std::string::npos; }));
  std::size_t total = 0;
  for (const auto& s : g.groups) {
    total += s.count;
    REQUIRE(s.reg);
    CHECK(s.reg->mae == doctest::Approx(1.0));
  }
  CHECK(total == co.test.size());
}

TEST_CASE("group_summary: threshold strata match direct filtering") {
  const auto co = synthetic_cohort(Task::MetsClass, 800, 43);
  const auto g = group_summary(co.train, Grouping::Threshold, Task::MetsClass);
  REQUIRE(g.groups.size() == 2);
  std::size_t above = 0;
  double sum_above = 0.0;
  for (const auto& r : co.train) {
    const double v = index_of(r, IndexKind::MetsIr).value;
    if (v > 41.33) {
      ++above;
      sum_above += *r.waist_cm;
    }
  }
  CHECK(g.groups[1].count == above);
  CHECK(g.groups[0].count == co.train.size() - above);
  const CharacteristicRow* waist = nullptr;
  const CharacteristicRow* mets = nullptr;
  for (const auto& c : g.groups[1].characteristics) {
    if (c.variable == "waist") waist = &c;
    if (c.variable == "METS-IR" || c.variable == to_string(IndexKind::MetsIr)) mets = &c;
  }
  REQUIRE(waist);
  REQUIRE(mets);
  CHECK(waist->mean == doctest::Approx(sum_above / above).epsilon(1e-12));
  CHECK(mets->mean > 41.33);
  // A classification metric inside one stratum has a single class.
  std::vector<double> preds(co.train.size(), 0.5);
  const auto gm = group_summary(co.train, Grouping::Threshold, Task::MetsClass, preds);
  for (const auto& s : gm.groups) {
    CHECK_FALSE(s.cls);
    CHECK_FALSE(s.note.empty());
  }
}

// ---------------------------------------------------------------------------
// Experiment configuration and orchestration

TEST_CASE("experiment config: parse, render, parse is a fixed point") {
  const auto c = parse_experiment_config(R"(
# comment line
tasks = MetsClass, MetsRegress
models = catboost, linear
seed = 99
mask = simplified
optimizer.regression = adamw:0.001
gbdt.n_trees = 50   # trailing comment
max_epochs = 3
synthetic_n = 600
)");
  CHECK(c.tasks == std::vector<Task>{Task::MetsClass, Task::MetsRegress});
  CHECK(c.models == std::vector<ModelKind>{ModelKind::Catboost, ModelKind::Linear});
  CHECK(c.base.seed == 99);
  CHECK(c.base.mask == FeatureMask::simplified());
  CHECK(c.base.gbdt.n_trees == 50);
  CHECK(c.cell(Task::MetsRegress, ModelKind::TabKanet).effective_optimizer().kind == OptimizerKind::AdamW);
  CHECK(c.cell(Task::MetsClass, ModelKind::TabKanet).effective_optimizer().kind == OptimizerKind::AdamW);
  const std::string text = to_text(c);
  CHECK(to_text(parse_experiment_config(text)) == text);
}

TEST_CASE("experiment config: errors cite the line") {
  try {
    parse_experiment_config("seed = 1\nbogus = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_experiment_config("seed = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("models = svm\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("just text\n"), ConfigError);
  CHECK_THROWS_AS(parse_optimizer_spec("adamw:-1"), ConfigError);
}

TEST_CASE("run_experiment: one task by one model gives one row per split plus data files") {
  ExperimentConfig c;
  c.tasks = {Task::MetsClass};
  c.models = {ModelKind::Catboost};
  c.base.gbdt.n_trees = 30;
  c.synthetic_n = 600;
  c.out_dir = scratch("one_cell");
  const auto run = run_experiment(c, load_datasets(c));
  REQUIRE(run.results.size() == 1);
  const auto& r = run.results[0];
  CHECK(r.error.empty());
  CHECK(r.splits.size() == 2);
  REQUIRE(r.find(Split::Test));
  CHECK(r.find(Split::Test)->cls->auc > 0.8);
  const std::string csv = slurp(c.out_dir / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(std::filesystem::exists(c.out_dir / "roc_MetsClass_catboost.csv"));
  CHECK(std::filesystem::exists(c.out_dir / "groups_MetsClass_catboost.csv"));
  CHECK(std::filesystem::exists(c.out_dir / "report.md"));
  CHECK(std::filesystem::exists(c.out_dir / "models" / "MetsClass_catboost" / "manifest.json"));
  const std::string report = slurp(c.out_dir / "report.md");
  CHECK(report.find("CatBoost") != std::string::npos);
  CHECK(report.find("Threshold strata") != std::string::npos);
}

TEST_CASE("run_experiment: external data without insulin marks HomaClass unavailable") {
  ExperimentConfig c;
  c.tasks = {Task::HomaClass, Task::MetsRegress};
  c.models = {ModelKind::Linear};
  c.synthetic_n = 500;
  c.synthetic_external_n = 200;
  c.out_dir = scratch("external");
  const auto run = run_experiment(c, load_datasets(c));
  REQUIRE(run.results.size() == 2);
  const auto* homa_ext = run.results[0].find(Split::External);
  REQUIRE(homa_ext);
  CHECK(homa_ext->status.rfind("unavailable", 0) == 0);
  CHECK(homa_ext->status.find("insulin") != std::string::npos);
  const auto* mets_ext = run.results[1].find(Split::External);
  REQUIRE(mets_ext);
  CHECK(mets_ext->status == "ok");
  CHECK(mets_ext->n > 0);
  CHECK(std::filesystem::exists(c.out_dir / "scatter_MetsRegress_linear.csv"));
}

TEST_CASE("run_experiment: identical fingerprints reuse cached results") {
  ExperimentConfig c;
  c.tasks = {Task::TygClass};
  c.models = {ModelKind::Linear, ModelKind::Forest};
  c.base.forest.n_trees = 10;
  c.synthetic_n = 400;
  c.out_dir = scratch("cache");
  const auto data = load_datasets(c);
  const auto first = run_experiment(c, data);
  const std::string csv1 = slurp(c.out_dir / "metrics.csv");
  const std::string report1 = slurp(c.out_dir / "report.md");
  const auto second = run_experiment(c, data);
  for (const auto& r : first.results) CHECK_FALSE(r.from_cache);
  for (const auto& r : second.results) CHECK(r.from_cache);
  CHECK(slurp(c.out_dir / "metrics.csv") == csv1);
  CHECK(slurp(c.out_dir / "report.md") == report1);
  c.base.forest.n_trees = 11;
  const auto third = run_experiment(c, data);
  CHECK(third.results[0].from_cache);
  CHECK_FALSE(third.results[1].from_cache);
  CHECK(third.results[1].fingerprint != first.results[1].fingerprint);
}

TEST_CASE("run_experiment: a failing cell is recorded and the matrix continues") {
  ExperimentConfig c;
  c.tasks = {Task::MetsClass};
  c.base.net.heads = 7;  // does not divide dim: rejected at build time
  c.models = {ModelKind::TabTransformer, ModelKind::Linear};
  c.synthetic_n = 300;
  c.use_cache = false;
  c.out_dir = scratch("failing");
  const auto run = run_experiment(c, load_datasets(c));
  REQUIRE(run.results.size() == 2);
  CHECK_FALSE(run.results[0].error.empty());
  CHECK(run.results[0].splits.front().status.rfind("failed", 0) == 0);
  CHECK(run.results[1].error.empty());
  const std::string csv = slurp(c.out_dir / "metrics.csv");
  CHECK(csv.find("tabtransformer") != std::string::npos);
  CHECK(csv.find("failed") != std::string::npos);
}

TEST_CASE("run_experiment: repeated runs without cache are byte-identical") {
  ExperimentConfig c;
  c.tasks = {Task::MetsClass, Task::MetsRegress};
  c.models = {ModelKind::Xgboost, ModelKind::Mlp};
  c.base.gbdt.n_trees = 20;
  c.base.max_epochs = 2;
  c.base.net.dim = 8;
  c.base.net.hidden = 8;
  c.synthetic_n = 300;
  c.use_cache = false;
  c.save_models = false;
  const auto data = load_datasets(c);
  const auto dir_a = scratch("det_a"), dir_b = scratch("det_b");
  c.out_dir = dir_a;
  const auto a = run_experiment(c, data);
  c.out_dir = dir_b;
  const auto b = run_experiment(c, data);
  const std::string csv = slurp(dir_a / "metrics.csv");
  CHECK_FALSE(csv.empty());
  CHECK(csv == slurp(dir_b / "metrics.csv"));
  for (std::size_t i = 0; i < a.results.size(); ++i) CHECK(a.results[i].fingerprint == b.results[i].fingerprint);
}
