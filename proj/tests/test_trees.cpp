#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "irkit/errors.hpp"
#include "irkit/trees.hpp"

using namespace irkit;
using namespace irkit::trees;

namespace {

DesignMatrix numeric_design(num::Matrix x) {
  DesignMatrix d;
  d.kinds.assign(x.cols(), ColumnKind::Numeric);
  d.x = std::move(x);
  return d;
}

DesignMatrix one_column(const std::vector<double>& xs) {
  return numeric_design(num::Matrix(xs.size(), 1, xs));
}

double accuracy(const std::vector<double>& p, const std::vector<double>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += ((p[i] > 0.5) == (y[i] > 0.5));
  return static_cast<double>(ok) / static_cast<double>(p.size());
}

std::vector<double> tree_predict(const Tree& t, const num::Matrix& x) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = t.predict(x.row(r));
  return out;
}

// Best train accuracy of any single threshold split (either orientation).
double brute_force_stump_accuracy(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> cuts = x;
  std::sort(cuts.begin(), cuts.end());
  double best = 0.0;
  for (double c : cuts) {
    std::size_t a = 0;
    for (std::size_t i = 0; i < x.size(); ++i) a += ((x[i] < c) == (y[i] < 0.5));
    const double acc = static_cast<double>(a) / static_cast<double>(x.size());
    best = std::max({best, acc, 1.0 - acc});
  }
  return best;
}

// Two informative numerics, one label-independent category column.
LabeledData noisy_with_null_category(std::size_t n, std::uint64_t seed) {
  num::Rng rng(seed);
  LabeledData d;
  d.data.x = num::Matrix(n, 3);
  d.data.kinds = {ColumnKind::Numeric, ColumnKind::Numeric, ColumnKind::Categorical};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rng.normal();
    d.data.x(i, 0) = a;
    d.data.x(i, 1) = b;
    d.data.x(i, 2) = static_cast<double>(rng.below(6));
    const double logit = 1.5 * a - b + 0.5 * rng.normal();
    d.y.push_back(logit > 0 ? 1.0 : 0.0);
  }
  return d;
}

}  // namespace

TEST_CASE("constant target gives a single leaf with that value") {
  const auto d = one_column({1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<double> y(8, 2.5);
  TreeParams p;
  p.min_leaf = 1;
  const Tree t = fit_tree(d, y, p);
  REQUIRE(t.nodes.size() == 1);
  CHECK(t.nodes[0].is_leaf());
  CHECK(t.nodes[0].value == 2.5);
  CHECK(t.predict(std::vector<double>{100.0}) == 2.5);
}

TEST_CASE("separable data gives a stump with perfect accuracy") {
  std::vector<double> xs, ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(i / 20.0);
    ys.push_back(i / 20.0 < 0.5 ? 0.0 : 1.0);
  }
  TreeParams p;
  p.min_leaf = 1;
  const Tree t = fit_tree(one_column(xs), ys, p);
  CHECK(t.depth() == 1);
  CHECK(t.leaf_count() == 2);
  CHECK(t.nodes[0].threshold == doctest::Approx(0.475));
  const auto pred = tree_predict(t, one_column(xs).x);
  CHECK(accuracy(pred, ys) == 1.0);
  CHECK(accuracy(pred, ys) == brute_force_stump_accuracy(xs, ys));
  // Prediction at 0.4 follows the left (class 0) leaf.
  CHECK(t.predict(std::vector<double>{0.4}) == 0.0);
}

TEST_CASE("XOR needs depth two and is then fit exactly") {
  num::Matrix x(40, 2);
  std::vector<double> y;
  for (std::size_t i = 0; i < 40; ++i) {
    const int a = static_cast<int>(i % 2), b = static_cast<int>((i / 2) % 2);
    x(i, 0) = a;
    x(i, 1) = b;
    y.push_back(a ^ b);
  }
  TreeParams p;
  p.min_leaf = 1;
  p.max_depth = 2;
  // Every root split has zero gain; the impure root still splits.
  const Tree t = fit_tree(numeric_design(x), y, p);
  CHECK(t.depth() == 2);
  CHECK(accuracy(tree_predict(t, x), y) == 1.0);
  p.max_depth = 1;
  CHECK(accuracy(tree_predict(fit_tree(numeric_design(x), y, p), x), y) == 0.5);
}

TEST_CASE("ties are broken by lowest feature then lowest threshold") {
  // Both columns separate y identically.
  num::Matrix x(10, 2);
  std::vector<double> y;
  for (std::size_t i = 0; i < 10; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = static_cast<double>(i) * 10.0;
    y.push_back(i < 5 ? 0.0 : 1.0);
  }
  TreeParams p;
  p.min_leaf = 1;
  p.max_depth = 1;
  const Tree t = fit_tree(numeric_design(x), y, p);
  CHECK(t.nodes[0].feature == 0);
  CHECK(t.nodes[0].threshold == 4.5);

  // Symmetric target: thresholds 2.5 and 6.5 give equal gain; lower wins.
  std::vector<double> sym = {1, 1, 1, 0, 0, 0, 0, 1, 1, 1};
  const Tree s = fit_tree(numeric_design(x), sym, p);
  CHECK(s.nodes[0].feature == 0);
  CHECK(s.nodes[0].threshold == 2.5);
}

TEST_CASE("fit_tree rejects empty data, bad depth, and mismatched lengths") {
  TreeParams p;
  CHECK_THROWS_AS(fit_tree(one_column({}), {}, p), DomainError);
  CHECK_THROWS_AS(fit_tree(one_column({1, 2}), std::vector<double>{1.0}, p), ShapeError);
  p.max_depth = 0;
  CHECK_THROWS_AS(fit_tree(one_column({1, 2}), std::vector<double>{1, 2}, p), ConfigError);
}

TEST_CASE("newton leaf is -G/(H+lambda)") {
  const auto d = one_column({1, 1, 1, 1});
  const std::vector<double> g = {1, 2, 3, 4}, h = {1, 1, 1, 1};
  TreeParams p;
  p.lambda = 1.0;
  const Tree t = fit_tree_newton(d, g, h, p);
  REQUIRE(t.nodes.size() == 1);
  CHECK(t.nodes[0].value == doctest::Approx(-10.0 / 5.0));
}

TEST_CASE("depth never exceeds the configured max and internal nodes have two children") {
  num::Rng rng(7);
  num::Matrix x(300, 3);
  std::vector<double> y;
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t c = 0; c < 3; ++c) x(i, c) = rng.normal();
    y.push_back(std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 2));
  }
  for (std::size_t depth : {1u, 2u, 4u, 8u}) {
    TreeParams p;
    p.max_depth = depth;
    p.min_leaf = 2;
    const Tree t = fit_tree(numeric_design(x), y, p);
    CHECK(t.depth() <= depth);
    for (const auto& n : t.nodes) {
      if (!n.is_leaf()) {
        CHECK(n.left > 0);
        CHECK(n.right > 0);
      }
    }
  }
}

TEST_CASE("min_leaf bounds the weight of every leaf") {
  num::Rng rng(3);
  num::Matrix x(200, 2);
  std::vector<double> y;
  for (std::size_t i = 0; i < 200; ++i) {
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y.push_back(x(i, 0) + rng.normal(0, 0.1));
  }
  TreeParams p;
  p.min_leaf = 17;
  const Tree t = fit_tree(numeric_design(x), y, p);
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) CHECK(n.cover >= 17.0);
  }
}

TEST_CASE("tree predictions are invariant under a monotone feature transform") {
  num::Rng rng(11);
  const std::size_t n = 120;
  num::Matrix x(n, 2), ex(n, 2);
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    ex(i, 0) = std::exp(x(i, 0));
    ex(i, 1) = x(i, 1);
    y.push_back(x(i, 0) > 0.3 ? 1.0 + x(i, 1) : -1.0);
  }
  TreeParams p;
  p.min_leaf = 3;
  p.max_depth = 4;
  const Tree a = fit_tree(numeric_design(x), y, p);
  const Tree b = fit_tree(numeric_design(ex), y, p);
  CHECK(a.nodes.size() == b.nodes.size());
  for (std::size_t i = 0; i < n; ++i) CHECK(a.predict(x.row(i)) == b.predict(ex.row(i)));
}

TEST_CASE("one-vs-rest categorical splits isolate a category") {
  DesignMatrix d;
  d.x = num::Matrix(30, 1);
  d.kinds = {ColumnKind::Categorical};
  std::vector<double> y;
  for (std::size_t i = 0; i < 30; ++i) {
    d.x(i, 0) = static_cast<double>(i % 3);
    y.push_back(i % 3 == 1 ? 5.0 : 0.0);
  }
  TreeParams p;
  p.min_leaf = 1;
  p.max_depth = 1;
  const Tree t = fit_tree(d, y, p);
  REQUIRE(!t.nodes[0].is_leaf());
  CHECK(t.nodes[0].categories == std::vector<int>{1});
  CHECK(t.predict(std::vector<double>{1.0}) == 5.0);
  CHECK(t.predict(std::vector<double>{2.0}) == 0.0);
}

TEST_CASE("histogram mode agrees with exact mode when bins cover every value") {
  num::Rng rng(5);
  std::vector<double> xs, ys;
  for (int i = 0; i < 100; ++i) {
    xs.push_back(static_cast<double>(rng.below(20)));
    ys.push_back(xs.back() > 9 ? 1.0 : 0.0);
  }
  TreeParams exact;
  exact.min_leaf = 1;
  TreeParams hist = exact;
  hist.histogram_bins = 256;
  const Tree a = fit_tree(one_column(xs), ys, exact);
  const Tree b = fit_tree(one_column(xs), ys, hist);
  for (double v = -1; v < 21; v += 0.5) {
    CHECK(a.predict(std::vector<double>{v}) == b.predict(std::vector<double>{v}));
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("ordered target statistics follow the recurrence") {
  const std::vector<int> col(3, 7);
  const std::vector<double> labels(3, 1.0);
  const std::vector<std::size_t> order = {0, 1, 2};
  const auto enc = ordered_target_encode_in_order(col, labels, order, 1.0, 0.5);
  CHECK(enc[0] == 0.5);
  CHECK(enc[1] == 0.75);
  CHECK(enc[2] == doctest::Approx(2.5 / 3.0).epsilon(1e-15));

  // A permuted order yields the same sequence in permutation order.
  const std::vector<std::size_t> rev = {2, 1, 0};
  const auto enc2 = ordered_target_encode_in_order(col, labels, rev, 1.0, 0.5);
  CHECK(enc2[2] == 0.5);
  CHECK(enc2[1] == 0.75);
}

TEST_CASE("ordered target statistics: first visit gets the prior, categories are independent") {
  num::Rng rng(99);
  std::vector<int> col;
  std::vector<double> labels;
  for (int i = 0; i < 50; ++i) {
    col.push_back(static_cast<int>(rng.below(2)));
    labels.push_back(rng.uniform() < 0.3 ? 1.0 : 0.0);
  }
  const double prior =
      std::accumulate(labels.begin(), labels.end(), 0.0) / static_cast<double>(labels.size());
  const auto enc = ordered_target_encode(col, labels, 1234);
  // Changing labels of category 1 leaves category 0 encodings untouched.
  auto labels2 = labels;
  for (std::size_t i = 0; i < col.size(); ++i) {
    if (col[i] == 1) labels2[i] = 1.0 - labels2[i];
  }
  const auto enc2 = ordered_target_encode(col, labels2, 1234, 1.0, prior);
  std::size_t seen_prior = 0;
  for (std::size_t i = 0; i < col.size(); ++i) {
    if (col[i] == 0) CHECK(enc[i] == enc2[i]);
    if (enc[i] == prior) ++seen_prior;
  }
  CHECK(seen_prior >= 2);  // the first visit of each category
  CHECK(ordered_target_encode(col, labels, 1234) == enc);
}

// ---------------------------------------------------------------------------

TEST_CASE("boosting training loss is nonincreasing and strictly falls early on") {
  num::Rng rng(21);
  LabeledData d;
  d.data = numeric_design(num::Matrix(200, 2));
  for (std::size_t i = 0; i < 200; ++i) {
    const double a = rng.normal(), b = rng.normal();
    d.data.x(i, 0) = a;
    d.data.x(i, 1) = b;
    d.y.push_back(a + 0.5 * b > 0 ? 1.0 : 0.0);
  }
  GbdtConfig cfg;
  cfg.n_trees = 80;
  cfg.learning_rate = 0.1;
  cfg.early_stop = false;
  const auto m = fit_gbdt(d, nullptr, cfg);
  REQUIRE(m.train_loss.size() == 81);
  for (std::size_t r = 1; r < m.train_loss.size(); ++r) {
    CHECK(m.train_loss[r] <= m.train_loss[r - 1]);
    if (r <= 50) CHECK(m.train_loss[r] < m.train_loss[r - 1]);
  }
  for (std::size_t i = 0; i < 200; ++i) {
    const double p = m.predict_row(d.data.x.row(i));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("prediction equals base score plus shrunken tree sum") {
  num::Rng rng(8);
  LabeledData d;
  d.data = numeric_design(num::Matrix(100, 1));
  for (std::size_t i = 0; i < 100; ++i) {
    d.data.x(i, 0) = rng.uniform();
    d.y.push_back(rng.uniform() < d.data.x(i, 0) ? 1.0 : 0.0);
  }
  GbdtConfig cfg;
  cfg.n_trees = 10;
  cfg.early_stop = false;
  const auto m = fit_gbdt(d, nullptr, cfg);
  for (std::size_t i = 0; i < 100; ++i) {
    double s = 0;
    for (const auto& t : m.trees) s += t.predict(d.data.x.row(i));
    const double f = m.base_score + m.learning_rate * s;
    CHECK(m.raw_score(d.data.x.row(i)) == doctest::Approx(f).epsilon(1e-14));
    CHECK(m.predict_row(d.data.x.row(i)) == doctest::Approx(1.0 / (1.0 + std::exp(-f))));
  }
}

TEST_CASE("regression on y = 3x reaches test RMSE under a tenth of std(y)") {
  num::Rng rng(4);
  auto make = [&](std::size_t n) {
    LabeledData d;
    d.data = numeric_design(num::Matrix(n, 1));
    for (std::size_t i = 0; i < n; ++i) {
      d.data.x(i, 0) = rng.uniform(-1, 1);
      d.y.push_back(3.0 * d.data.x(i, 0));
    }
    return d;
  };
  const auto train = make(500), test = make(500);
  GbdtConfig cfg;
  cfg.loss = Loss::Squared;
  cfg.n_trees = 300;
  cfg.learning_rate = 0.1;
  cfg.min_leaf = 5;
  cfg.early_stop = false;
  const auto m = fit_gbdt(train, nullptr, cfg);
  const auto p = m.predict(test.data.x);
  double mse = 0, mean = 0, var = 0;
  for (double v : test.y) mean += v / 500.0;
  for (std::size_t i = 0; i < 500; ++i) {
    mse += (p[i] - test.y[i]) * (p[i] - test.y[i]) / 500.0;
    var += (test.y[i] - mean) * (test.y[i] - mean) / 500.0;
  }
  CHECK(std::sqrt(mse) < 0.1 * std::sqrt(var));
}

TEST_CASE("zero trees gives the constant base score") {
  LabeledData d;
  d.data = one_column({0, 1, 2, 3});
  d.y = {0, 1, 1, 1};
  GbdtConfig cfg;
  cfg.n_trees = 0;
  const auto m = fit_gbdt(d, nullptr, cfg);
  CHECK(m.trees.empty());
  CHECK(m.base_score == doctest::Approx(std::log(3.0)));
  for (double v : {-5.0, 0.0, 7.0}) CHECK(m.predict_row(std::vector<double>{v}) == doctest::Approx(0.75));
}

TEST_CASE("single-class target warns and returns a constant predictor") {
  LabeledData d;
  d.data = one_column({0, 1, 2, 3});
  d.y = {1, 1, 1, 1};
  const auto m = fit_gbdt(d, nullptr, GbdtConfig{});
  CHECK(m.trees.empty());
  CHECK(m.warnings.size() == 1);
  CHECK(m.predict_row(std::vector<double>{0.0}) > 0.999);
}

TEST_CASE("early stopping truncates to the best validation round") {
  const auto train = noisy_with_null_category(300, 1), val = noisy_with_null_category(300, 2);
  GbdtConfig cfg;
  cfg.n_trees = 400;
  cfg.learning_rate = 0.3;
  cfg.min_leaf = 2;
  cfg.patience = 10;
  const auto m = fit_gbdt(train, &val, cfg);
  CHECK(m.trees.size() == m.best_iteration);
  CHECK(m.val_loss.size() < 401);
  const auto best = std::min_element(m.val_loss.begin(), m.val_loss.end()) - m.val_loss.begin();
  CHECK(static_cast<std::size_t>(best) == m.best_iteration);
}

TEST_CASE("a label-independent category gets under 5% of gain with ordered statistics") {
  for (std::uint64_t seed : {17u, 40u, 63u}) {
    const auto train = noisy_with_null_category(2000, seed);
    const auto val = noisy_with_null_category(600, seed + 1);
    const auto m = fit_gbdt(train, &val, GbdtConfig{});
    const double total = std::accumulate(m.gains.begin(), m.gains.end(), 0.0);
    CHECK(m.gains[2] / total < 0.05);
  }
}

TEST_CASE("gbdt prediction checks the column count") {
  LabeledData d;
  d.data = one_column({0, 1, 2, 3});
  d.y = {0, 1, 0, 1};
  GbdtConfig cfg;
  cfg.n_trees = 2;
  const auto m = fit_gbdt(d, nullptr, cfg);
  CHECK_THROWS_AS(m.predict(num::Matrix(2, 3)), ShapeError);
}

// ---------------------------------------------------------------------------

TEST_CASE("one-tree forest equals fit_tree on its bootstrap sample") {
  num::Rng rng(31);
  LabeledData d;
  d.data = numeric_design(num::Matrix(80, 2));
  for (std::size_t i = 0; i < 80; ++i) {
    d.data.x(i, 0) = rng.normal();
    d.data.x(i, 1) = rng.normal();
    d.y.push_back(d.data.x(i, 0) - d.data.x(i, 1) > 0 ? 1.0 : 0.0);
  }
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.feature_rate = 1.0;
  cfg.min_leaf = 3;
  cfg.max_depth = 5;
  cfg.seed = 42;
  const auto forest = fit_forest(d, cfg);
  const auto w = bootstrap_weights(80, forest.tree_seeds[0]);
  // Materialise the bootstrap sample as duplicated rows.
  std::vector<double> flat, yb;
  for (std::size_t i = 0; i < 80; ++i) {
    for (int k = 0; k < static_cast<int>(w[i]); ++k) {
      flat.push_back(d.data.x(i, 0));
      flat.push_back(d.data.x(i, 1));
      yb.push_back(d.y[i]);
    }
  }
  CHECK(yb.size() == 80);
  TreeParams p;
  p.max_depth = 5;
  p.min_leaf = 3;
  const Tree t = fit_tree(numeric_design(num::Matrix(yb.size(), 2, flat)), yb, p);
  for (std::size_t i = 0; i < 80; ++i) CHECK(forest.predict_row(d.data.x.row(i)) == t.predict(d.data.x.row(i)));
}

TEST_CASE("a 50-tree forest is at least as accurate as a stump on separable data") {
  num::Rng rng(13);
  LabeledData d;
  d.data = numeric_design(num::Matrix(200, 2));
  for (std::size_t i = 0; i < 200; ++i) {
    d.data.x(i, 0) = rng.normal();
    d.data.x(i, 1) = rng.normal();
    d.y.push_back(d.data.x(i, 0) + d.data.x(i, 1) > 0 ? 1.0 : 0.0);
  }
  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.feature_rate = 0.5;
  cfg.min_leaf = 1;
  const auto forest = fit_forest(d, cfg);
  TreeParams p;
  p.max_depth = 1;
  p.min_leaf = 1;
  const Tree stump = fit_tree(d.data, d.y, p);
  CHECK(accuracy(forest.predict(d.data.x), d.y) >= accuracy(tree_predict(stump, d.data.x), d.y));
}

TEST_CASE("identical seeds give bit-identical serialized models") {
  const auto d = noisy_with_null_category(300, 5);
  ForestConfig fc;
  fc.n_trees = 10;
  fc.seed = 77;
  CHECK(to_json(fit_forest(d, fc)) == to_json(fit_forest(d, fc)));
  fc.seed = 78;
  const auto other = to_json(fit_forest(d, fc));
  fc.seed = 77;
  CHECK(to_json(fit_forest(d, fc)) != other);

  GbdtConfig gc;
  gc.n_trees = 20;
  gc.seed = 3;
  CHECK(to_json(fit_gbdt(d, nullptr, gc)) == to_json(fit_gbdt(d, nullptr, gc)));
}

TEST_CASE("json round trip preserves predictions") {
  const auto d = noisy_with_null_category(300, 6);
  GbdtConfig gc;
  gc.n_trees = 15;
  for (auto mode : {CategoricalMode::OneHot, CategoricalMode::OrderedTarget}) {
    gc.cat_mode = mode;
    const auto m = fit_gbdt(d, nullptr, gc);
    const auto back = gbdt_from_json(to_json(m));
    CHECK(to_json(back) == to_json(m));
    for (std::size_t i = 0; i < 300; ++i) CHECK(back.predict_row(d.data.x.row(i)) == m.predict_row(d.data.x.row(i)));
  }
  ForestConfig fc;
  fc.n_trees = 5;
  const auto f = fit_forest(d, fc);
  const auto fb = forest_from_json(to_json(f));
  for (std::size_t i = 0; i < 300; ++i) CHECK(fb.predict_row(d.data.x.row(i)) == f.predict_row(d.data.x.row(i)));
  CHECK_THROWS_AS(gbdt_from_json(to_json(f)), SchemaError);
}

TEST_CASE("design_from_features keeps active slots in order") {
  FeatureVector v;
  for (std::size_t s = 0; s < kNumNumeric; ++s) v.numeric[s] = static_cast<double>(s) + 0.5;
  v.categorical = {1, 3};
  const std::vector<FeatureVector> rows = {v};
  const auto full = design_from_features(rows, FeatureMask::full());
  CHECK(full.cols() == kNumFeatures);
  CHECK(full.kinds[7] == ColumnKind::Categorical);
  CHECK(full.x(0, 8) == 3.0);
  const auto simple = design_from_features(rows, FeatureMask::simplified());
  REQUIRE(simple.cols() == 2);
  CHECK(simple.x(0, 0) == 1.5);  // bmi
  CHECK(simple.x(0, 1) == 6.5);  // fpg
}
