#include "irkit/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "irkit/errors.hpp"
#include "json.hpp"

namespace irkit::trees {
namespace {

using nlohmann::json;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Stat {
  double g = 0.0, h = 0.0, w = 0.0, gg = 0.0;
  void add(double gi, double hi, double wi) {
    g += wi * gi;
    h += wi * hi;
    w += wi;
    gg += wi * gi * gi;
  }
};

struct Candidate {
  double gain = kNegInf;
  int feature = -1;
  double lower = 0.0;  // last value left of the cut
  double upper = 0.0;  // first value right of the cut
  int category = -1;   // one-vs-rest split
};

// Holds the per-matrix preprocessing (sorted orders, optional binning) so a
// boosting run sorts each column once rather than once per tree.
class Grower {
 public:
  Grower(const DesignMatrix& data, const TreeParams& params) : data_(data), params_(params) {
    if (data.rows() == 0) throw DomainError("fit_tree: empty data");
    if (data.kinds.size() != data.cols()) {
      throw ShapeError("fit_tree: column kinds do not match design matrix");
    }
    if (params.max_depth < 1) throw ConfigError("fit_tree: max_depth must be >= 1");
    const std::size_t n = data.rows(), p = data.cols();
    values_ = data.x;
    cuts_.resize(p);
    threshold_split_.resize(p);
    for (std::size_t c = 0; c < p; ++c) {
      threshold_split_[c] =
          data.kinds[c] == ColumnKind::Numeric || !params.one_hot_categorical;
      if (threshold_split_[c] && params.histogram_bins > 1 && data.kinds[c] == ColumnKind::Numeric) {
        bin_column(c);
      }
    }
    order_.resize(p);
    for (std::size_t c = 0; c < p; ++c) {
      if (!threshold_split_[c]) continue;
      auto& ord = order_[c];
      ord.resize(n);
      std::iota(ord.begin(), ord.end(), std::size_t{0});
      std::stable_sort(ord.begin(), ord.end(),
                       [&](std::size_t a, std::size_t b) { return values_(a, c) < values_(b, c); });
    }
  }

  // cart = raw-target mode: an impure node splits even at zero gain, as
  // needed for XOR-like targets; Newton mode requires positive gain.
  Tree grow(std::span<const double> grad, std::span<const double> hess,
            std::span<const double> weights, double lambda, num::Rng* rng, GainVector* gains,
            bool cart = false) const {
    const std::size_t n = data_.rows(), p = data_.cols();
    if (grad.size() != n || hess.size() != n || (!weights.empty() && weights.size() != n)) {
      throw ShapeError("fit_tree: gradient/hessian/weight length does not match rows");
    }
    if (gains != nullptr && gains->size() != p) gains->assign(p, 0.0);
    auto wt = [&](std::size_t r) { return weights.empty() ? 1.0 : weights[r]; };

    Tree tree;
    std::vector<int> node_of(n, -1);
    Stat root;
    for (std::size_t r = 0; r < n; ++r) {
      if (wt(r) <= 0.0) continue;
      node_of[r] = 0;
      root.add(grad[r], hess[r], wt(r));
    }
    if (root.w <= 0.0) throw DomainError("fit_tree: all row weights are zero");
    tree.nodes.push_back(TreeNode{});
    std::vector<Stat> stats{root};
    std::vector<int> open{0};

    auto leaf_value = [lambda](const Stat& s) {
      const double denom = s.h + lambda;
      return denom > 0.0 ? -s.g / denom : 0.0;
    };
    auto score = [lambda](double g, double h) {
      const double denom = h + lambda;
      return denom > 0.0 ? g * g / denom : 0.0;
    };

    const std::size_t m = params_.feature_rate >= 1.0
                              ? p
                              : std::max<std::size_t>(
                                    1, static_cast<std::size_t>(std::llround(params_.feature_rate *
                                                                              static_cast<double>(p))));

    for (std::size_t depth = 0; !open.empty(); ++depth) {
      const std::size_t k_open = open.size();
      for (int id : open) {
        tree.nodes[id].cover = stats[id].w;
        tree.nodes[id].value = leaf_value(stats[id]);
      }
      if (depth >= params_.max_depth) break;

      std::vector<int> slot_of(tree.nodes.size(), -1);
      for (std::size_t k = 0; k < k_open; ++k) slot_of[open[k]] = static_cast<int>(k);

      // Column subsets per open node.
      std::vector<std::vector<char>> allowed(k_open, std::vector<char>(p, 1));
      if (m < p) {
        if (rng == nullptr) throw ConfigError("fit_tree: feature subsampling needs an Rng");
        std::vector<std::size_t> cols(p);
        for (std::size_t k = 0; k < k_open; ++k) {
          std::iota(cols.begin(), cols.end(), std::size_t{0});
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng->below(p - i));
            std::swap(cols[i], cols[j]);
          }
          std::fill(allowed[k].begin(), allowed[k].end(), 0);
          for (std::size_t i = 0; i < m; ++i) allowed[k][cols[i]] = 1;
        }
      }

      std::vector<Candidate> best(k_open);
      std::vector<double> parent(k_open);
      for (std::size_t k = 0; k < k_open; ++k) parent[k] = score(stats[open[k]].g, stats[open[k]].h);

      auto consider = [&](std::size_t k, const Stat& left, Candidate cand) {
        const Stat& tot = stats[open[k]];
        const double wr = tot.w - left.w;
        if (left.w < params_.min_leaf || wr < params_.min_leaf) return;
        cand.gain = score(left.g, left.h) + score(tot.g - left.g, tot.h - left.h) - parent[k];
        if (cand.gain > best[k].gain) best[k] = cand;
      };

      std::vector<Stat> running(k_open);
      std::vector<double> last(k_open);
      std::vector<char> has_last(k_open);
      for (std::size_t c = 0; c < p; ++c) {
        if (threshold_split_[c]) {
          std::fill(running.begin(), running.end(), Stat{});
          std::fill(has_last.begin(), has_last.end(), 0);
          for (std::size_t r : order_[c]) {
            const int node = node_of[r];
            if (node < 0) continue;
            const int k = slot_of[node];
            if (k < 0 || !allowed[k][c]) continue;
            const double v = values_(r, c);
            if (has_last[k] && v != last[k]) {
              consider(k, running[k], Candidate{0.0, static_cast<int>(c), last[k], v, -1});
            }
            running[k].add(grad[r], hess[r], wt(r));
            last[k] = v;
            has_last[k] = 1;
          }
        } else {
          int max_code = 0;
          for (std::size_t r = 0; r < n; ++r) {
            max_code = std::max(max_code, static_cast<int>(values_(r, c)));
          }
          std::vector<std::vector<Stat>> per(k_open, std::vector<Stat>(max_code + 1));
          for (std::size_t r = 0; r < n; ++r) {
            const int node = node_of[r];
            if (node < 0) continue;
            const int k = slot_of[node];
            if (k < 0 || !allowed[k][c]) continue;
            const int code = static_cast<int>(values_(r, c));
            if (code < 0) throw DomainError("fit_tree: negative categorical code");
            per[k][code].add(grad[r], hess[r], wt(r));
          }
          for (std::size_t k = 0; k < k_open; ++k) {
            if (!allowed[k][c]) continue;
            for (int code = 0; code <= max_code; ++code) {
              if (per[k][code].w <= 0.0) continue;
              consider(k, per[k][code], Candidate{0.0, static_cast<int>(c), 0, 0, code});
            }
          }
        }
      }

      std::vector<int> next;
      for (std::size_t k = 0; k < k_open; ++k) {
        const int id = open[k];
        const Candidate& b = best[k];
        const Stat& st = stats[id];
        const double tol = 1e-10 * std::max(1.0, parent[k]);
        if (b.feature < 0) continue;
        if (cart) {
          const double sse = st.gg - st.g * st.g / st.w;
          if (!(sse > 1e-12 * std::max(1.0, st.gg)) || b.gain < -tol) continue;
        } else if (!(b.gain > tol)) {
          continue;
        }
        TreeNode& node = tree.nodes[id];
        node.feature = b.feature;
        node.gain = b.gain;
        if (b.category >= 0) {
          node.categories = {b.category};
        } else {
          node.threshold = threshold_from(b);
        }
        if (gains != nullptr) (*gains)[b.feature] += b.gain;
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes[id].left = left;
        tree.nodes[id].right = left + 1;
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stats.emplace_back();
        stats.emplace_back();
        next.push_back(left);
        next.push_back(left + 1);
      }
      // Route rows of split nodes into children and total their stats.
      for (std::size_t r = 0; r < n; ++r) {
        const int node = node_of[r];
        if (node < 0) continue;
        const TreeNode& t = tree.nodes[node];
        if (t.is_leaf()) {
          node_of[r] = -1;
          continue;
        }
        const int child = goes_left(t, values_(r, t.feature), data_.x(r, t.feature)) ? t.left
                                                                                     : t.right;
        node_of[r] = child;
        stats[child].add(grad[r], hess[r], wt(r));
      }
      open = std::move(next);
    }
    return tree;
  }

 private:
  void bin_column(std::size_t c) {
    const std::size_t n = data_.rows();
    std::vector<double> sorted(n);
    for (std::size_t r = 0; r < n; ++r) sorted[r] = data_.x(r, c);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double>& cuts = cuts_[c];
    const std::size_t bins = params_.histogram_bins;
    if (sorted.size() <= bins) {
      for (std::size_t i = 1; i < sorted.size(); ++i) cuts.push_back(0.5 * (sorted[i - 1] + sorted[i]));
    } else {
      for (std::size_t b = 1; b < bins; ++b) {
        const std::size_t i = b * sorted.size() / bins;
        const double cut = 0.5 * (sorted[i - 1] + sorted[i]);
        if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      const double v = data_.x(r, c);
      values_(r, c) = static_cast<double>(std::upper_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
    }
  }

  double threshold_from(const Candidate& b) const {
    const auto& cuts = cuts_[b.feature];
    if (cuts.empty()) return 0.5 * (b.lower + b.upper);
    // Binned: left holds bins <= lower, i.e. raw x < cuts[lower].
    return cuts[static_cast<std::size_t>(b.lower)];
  }

  static bool goes_left(const TreeNode& t, double /*binned*/, double raw) {
    if (!t.categories.empty()) {
      return std::find(t.categories.begin(), t.categories.end(), static_cast<int>(raw)) !=
             t.categories.end();
    }
    return raw < t.threshold;
  }

  const DesignMatrix& data_;
  TreeParams params_;
  num::Matrix values_;
  std::vector<std::vector<double>> cuts_;
  std::vector<char> threshold_split_;
  std::vector<std::vector<std::size_t>> order_;
};

}  // namespace

// ---------------------------------------------------------------------------

double Tree::predict(std::span<const double> row) const {
  if (nodes.empty()) return 0.0;
  int id = 0;
  while (!nodes[id].is_leaf()) {
    const TreeNode& n = nodes[id];
    const double v = row[static_cast<std::size_t>(n.feature)];
    bool left;
    if (!n.categories.empty()) {
      left = std::find(n.categories.begin(), n.categories.end(), static_cast<int>(v)) !=
             n.categories.end();
    } else {
      left = v < n.threshold;
    }
    id = left ? n.left : n.right;
  }
  return nodes[id].value;
}

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].is_leaf()) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
    best = std::max(best, d[i]);
  }
  return best;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

Tree fit_tree_newton(const DesignMatrix& data, std::span<const double> grad,
                     std::span<const double> hess, const TreeParams& params, num::Rng* rng,
                     std::span<const double> weights, GainVector* gains) {
  return Grower(data, params).grow(grad, hess, weights, params.lambda, rng, gains);
}

Tree fit_tree(const DesignMatrix& data, std::span<const double> targets, const TreeParams& params,
              num::Rng* rng, std::span<const double> weights, GainVector* gains) {
  if (targets.size() != data.rows()) throw ShapeError("fit_tree: target length mismatch");
  std::vector<double> g(targets.size()), h(targets.size(), 1.0);
  for (std::size_t i = 0; i < targets.size(); ++i) g[i] = -targets[i];
  return Grower(data, params).grow(g, h, weights, 0.0, rng, gains, true);
}

// ---------------------------------------------------------------------------

std::vector<double> ordered_target_encode_in_order(std::span<const int> column,
                                                   std::span<const double> labels,
                                                   std::span<const std::size_t> order, double a,
                                                   double prior) {
  if (column.size() != labels.size() || order.size() != column.size()) {
    throw ShapeError("ordered_target_encode: length mismatch");
  }
  std::map<int, std::pair<double, double>> running;
  std::vector<double> out(column.size());
  for (std::size_t r : order) {
    auto& [sum, count] = running[column[r]];
    out[r] = (sum + a * prior) / (count + a);
    sum += labels[r];
    count += 1.0;
  }
  return out;
}

std::vector<double> ordered_target_encode(std::span<const int> column,
                                          std::span<const double> labels, std::uint64_t seed,
                                          double a, std::optional<double> prior) {
  if (column.size() != labels.size()) throw ShapeError("ordered_target_encode: length mismatch");
  double p = 0.0;
  if (prior) {
    p = *prior;
  } else if (!labels.empty()) {
    p = std::accumulate(labels.begin(), labels.end(), 0.0) / static_cast<double>(labels.size());
  }
  std::vector<std::size_t> order(column.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  num::Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return ordered_target_encode_in_order(column, labels, order, a, p);
}

double TargetStatistics::encode(int code) const {
  const auto it = per_category.find(code);
  if (it == per_category.end()) return prior;
  return (it->second.first + a * prior) / (it->second.second + a);
}

// ---------------------------------------------------------------------------

std::string_view to_string(Loss l) { return l == Loss::Logistic ? "logistic" : "squared"; }

std::string_view to_string(CategoricalMode m) {
  return m == CategoricalMode::OneHot ? "one-hot" : "ordered-target";
}

double logistic_loss(std::span<const double> raw, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double f = raw[i];
    // log(1 + e^f) - y f, stable for large |f|.
    s += (f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f))) - y[i] * f;
  }
  return s / static_cast<double>(raw.size());
}

double squared_loss(std::span<const double> raw, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) s += (raw[i] - y[i]) * (raw[i] - y[i]);
  return s / static_cast<double>(raw.size());
}

namespace {

double sigmoid(double f) { return 1.0 / (1.0 + std::exp(-f)); }

// Applies prediction-time target statistics to the categorical columns.
num::Matrix apply_target_stats(const num::Matrix& x,
                               const std::map<std::size_t, TargetStatistics>& ts) {
  if (ts.empty()) return x;
  num::Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (const auto& [c, stat] : ts) out(r, c) = stat.encode(static_cast<int>(x(r, c)));
  }
  return out;
}

}  // namespace

double GbdtModel::raw_score(std::span<const double> row) const {
  std::vector<double> buf;
  std::span<const double> use = row;
  if (!target_stats.empty()) {
    buf.assign(row.begin(), row.end());
    for (const auto& [c, stat] : target_stats) buf[c] = stat.encode(static_cast<int>(row[c]));
    use = buf;
  }
  double s = 0.0;
  for (const Tree& t : trees) s += t.predict(use);
  return base_score + learning_rate * s;
}

double GbdtModel::predict_row(std::span<const double> row) const {
  const double f = raw_score(row);
  return loss == Loss::Logistic ? sigmoid(f) : f;
}

std::vector<double> GbdtModel::predict(const num::Matrix& x) const {
  if (!kinds.empty() && x.cols() != kinds.size()) {
    throw ShapeError("gbdt predict: expected " + std::to_string(kinds.size()) + " columns, got " +
                     std::to_string(x.cols()));
  }
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict_row(x.row(r));
  return out;
}

GbdtModel fit_gbdt(const LabeledData& train, const LabeledData* val, const GbdtConfig& config) {
  const std::size_t n = train.data.rows();
  if (n == 0) throw DomainError("fit_gbdt: empty training data");
  if (train.y.size() != n) throw ShapeError("fit_gbdt: label length mismatch");
  if (config.learning_rate <= 0.0) throw ConfigError("fit_gbdt: learning_rate must be > 0");

  GbdtModel model;
  model.learning_rate = config.learning_rate;
  model.loss = config.loss;
  model.cat_mode = config.cat_mode;
  model.kinds = train.data.kinds;
  model.gains.assign(train.data.cols(), 0.0);

  const double mean_y = std::accumulate(train.y.begin(), train.y.end(), 0.0) / static_cast<double>(n);
  if (config.loss == Loss::Logistic) {
    for (double y : train.y) {
      if (y != 0.0 && y != 1.0) throw DomainError("fit_gbdt: logistic loss needs 0/1 labels");
    }
    if (mean_y == 0.0 || mean_y == 1.0) {
      model.warnings.emplace_back("single-class target: returning a constant predictor");
      model.base_score = mean_y == 1.0 ? 20.0 : -20.0;
      model.train_loss.push_back(logistic_loss(std::vector<double>(n, model.base_score), train.y));
      return model;
    }
    model.base_score = std::log(mean_y / (1.0 - mean_y));
  } else {
    model.base_score = mean_y;
  }

  DesignMatrix work = train.data;
  num::Rng rng(config.seed);
  if (config.cat_mode == CategoricalMode::OrderedTarget) {
    for (std::size_t c = 0; c < work.cols(); ++c) {
      if (work.kinds[c] != ColumnKind::Categorical) continue;
      std::vector<int> codes(n);
      for (std::size_t r = 0; r < n; ++r) codes[r] = static_cast<int>(work.x(r, c));
      const auto enc = ordered_target_encode(codes, train.y, rng.fork_seed(), 1.0, mean_y);
      TargetStatistics ts;
      ts.prior = mean_y;
      ts.a = 1.0;
      for (std::size_t r = 0; r < n; ++r) {
        work.x(r, c) = enc[r];
        auto& [s, cnt] = ts.per_category[codes[r]];
        s += train.y[r];
        cnt += 1.0;
      }
      work.kinds[c] = ColumnKind::Numeric;
      model.target_stats[c] = ts;
    }
  }

  TreeParams tp;
  tp.max_depth = config.max_depth;
  tp.min_leaf = config.min_leaf;
  tp.lambda = config.lambda;
  tp.histogram_bins = config.histogram_bins;
  tp.one_hot_categorical = true;
  const Grower grower(work, tp);

  std::vector<double> f(n, model.base_score), g(n), h(n);
  auto loss_of = [&](std::span<const double> raw, std::span<const double> y) {
    return config.loss == Loss::Logistic ? logistic_loss(raw, y) : squared_loss(raw, y);
  };
  model.train_loss.push_back(loss_of(f, train.y));

  std::vector<double> fv;
  num::Matrix val_x;
  const bool track_val = val != nullptr && val->data.rows() > 0;
  if (track_val) {
    if (val->data.cols() != train.data.cols()) throw ShapeError("fit_gbdt: validation columns differ");
    val_x = apply_target_stats(val->data.x, model.target_stats);
    fv.assign(val->data.rows(), model.base_score);
    model.val_loss.push_back(loss_of(fv, val->y));
  }
  double best_val = track_val ? model.val_loss.back() : 0.0;
  std::size_t best_iter = 0;

  for (std::size_t round = 0; round < config.n_trees; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      if (config.loss == Loss::Logistic) {
        const double p = sigmoid(f[i]);
        g[i] = p - train.y[i];
        h[i] = std::max(p * (1.0 - p), 1e-16);
      } else {
        g[i] = f[i] - train.y[i];
        h[i] = 1.0;
      }
    }
    GainVector gains;
    Tree tree = grower.grow(g, h, {}, config.lambda, nullptr, &gains);
    for (std::size_t i = 0; i < n; ++i) f[i] += config.learning_rate * tree.predict(work.x.row(i));
    model.train_loss.push_back(loss_of(f, train.y));
    for (std::size_t c = 0; c < gains.size(); ++c) model.gains[c] += gains[c];
    if (track_val) {
      for (std::size_t i = 0; i < fv.size(); ++i) fv[i] += config.learning_rate * tree.predict(val_x.row(i));
      model.val_loss.push_back(loss_of(fv, val->y));
    }
    model.trees.push_back(std::move(tree));
    if (track_val) {
      if (model.val_loss.back() < best_val) {
        best_val = model.val_loss.back();
        best_iter = model.trees.size();
      } else if (config.early_stop && model.trees.size() - best_iter >= config.patience) {
        break;
      }
    }
  }
  if (track_val && config.early_stop) {
    model.trees.resize(best_iter);
    model.best_iteration = best_iter;
    // Gains must describe the retained trees only.
    std::fill(model.gains.begin(), model.gains.end(), 0.0);
    for (const Tree& t : model.trees) {
      for (const TreeNode& node : t.nodes) {
        if (!node.is_leaf()) model.gains[node.feature] += node.gain;
      }
    }
  } else {
    model.best_iteration = model.trees.size();
  }
  return model;
}

// ---------------------------------------------------------------------------

std::vector<double> bootstrap_weights(std::size_t n, std::uint64_t seed) {
  num::Rng rng(seed);
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[rng.below(n)] += 1.0;
  return w;
}

double ForestModel::predict_row(std::span<const double> row) const {
  if (trees.empty()) return 0.0;
  double s = 0.0;
  for (const Tree& t : trees) s += t.predict(row);
  return s / static_cast<double>(trees.size());
}

std::vector<double> ForestModel::predict(const num::Matrix& x) const {
  if (!kinds.empty() && x.cols() != kinds.size()) {
    throw ShapeError("forest predict: expected " + std::to_string(kinds.size()) + " columns, got " +
                     std::to_string(x.cols()));
  }
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict_row(x.row(r));
  return out;
}

ForestModel fit_forest(const LabeledData& train, const ForestConfig& config) {
  const std::size_t n = train.data.rows();
  if (n == 0) throw DomainError("fit_forest: empty training data");
  if (train.y.size() != n) throw ShapeError("fit_forest: label length mismatch");
  if (config.n_trees == 0) throw ConfigError("fit_forest: n_trees must be >= 1");
  ForestModel model;
  model.feature_rate = config.feature_rate;
  model.kinds = train.data.kinds;
  model.gains.assign(train.data.cols(), 0.0);

  TreeParams tp;
  tp.max_depth = config.max_depth;
  tp.min_leaf = config.min_leaf;
  tp.lambda = 0.0;
  tp.feature_rate = config.feature_rate;
  tp.one_hot_categorical = true;
  const Grower grower(train.data, tp);

  std::vector<double> g(n), h(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) g[i] = -train.y[i];
  num::Rng rng(config.seed);
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    const std::uint64_t seed = rng.fork_seed();
    model.tree_seeds.push_back(seed);
    const std::vector<double> w =
        config.bootstrap ? bootstrap_weights(n, seed) : std::vector<double>(n, 1.0);
    num::Rng split_rng(seed ^ 0xD1B54A32D192ED03ULL);
    GainVector gains;
    model.trees.push_back(grower.grow(g, h, w, 0.0, &split_rng, &gains, true));
    for (std::size_t c = 0; c < gains.size(); ++c) model.gains[c] += gains[c];
  }
  return model;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> active_slots(const FeatureMask& mask) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < kNumFeatures; ++s) {
    if (mask[s]) out.push_back(s);
  }
  return out;
}

DesignMatrix design_from_features(std::span<const FeatureVector> rows, const FeatureMask& mask) {
  const auto slots = active_slots(mask);
  DesignMatrix d;
  d.x = num::Matrix(rows.size(), slots.size());
  for (std::size_t s : slots) {
    d.kinds.push_back(is_categorical(s) ? ColumnKind::Categorical : ColumnKind::Numeric);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < slots.size(); ++j) d.x(r, j) = rows[r].get(slots[j]);
  }
  return d;
}

// ---------------------------------------------------------------------------

namespace {

json tree_json(const Tree& tree) {
  json nodes = json::array();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    json j;
    j["id"] = i;
    j["cover"] = n.cover;
    if (n.is_leaf()) {
      j["leaf"] = n.value;
    } else {
      j["feature"] = n.feature;
      if (n.categories.empty()) {
        j["threshold"] = n.threshold;
      } else {
        j["categories"] = n.categories;
      }
      j["left"] = n.left;
      j["right"] = n.right;
      j["gain"] = n.gain;
      j["value"] = n.value;
    }
    nodes.push_back(std::move(j));
  }
  return json{{"nodes", std::move(nodes)}};
}

Tree tree_from(const json& j) {
  Tree t;
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.cover = jn.value("cover", 0.0);
    if (jn.contains("leaf")) {
      n.value = jn.at("leaf").get<double>();
    } else {
      n.feature = jn.at("feature").get<int>();
      if (jn.contains("categories")) {
        n.categories = jn.at("categories").get<std::vector<int>>();
      } else {
        n.threshold = jn.at("threshold").get<double>();
      }
      n.left = jn.at("left").get<int>();
      n.right = jn.at("right").get<int>();
      n.gain = jn.value("gain", 0.0);
      n.value = jn.value("value", 0.0);
    }
    t.nodes.push_back(std::move(n));
  }
  return t;
}

json kinds_json(const std::vector<ColumnKind>& kinds) {
  json a = json::array();
  for (ColumnKind k : kinds) a.push_back(k == ColumnKind::Numeric ? "numeric" : "categorical");
  return a;
}

std::vector<ColumnKind> kinds_from(const json& j) {
  std::vector<ColumnKind> out;
  for (const auto& k : j) {
    out.push_back(k.get<std::string>() == "numeric" ? ColumnKind::Numeric : ColumnKind::Categorical);
  }
  return out;
}

void check_header(const json& j, const char* kind) {
  if (j.value("format", "") != "irkit.trees" || j.value("version", 0) != 1 ||
      j.value("kind", "") != kind) {
    throw SchemaError(std::string("not an irkit.trees v1 ") + kind + " document");
  }
}

}  // namespace

std::string to_json(const Tree& tree) { return tree_json(tree).dump(); }

std::string to_json(const GbdtModel& m) {
  json j;
  j["format"] = "irkit.trees";
  j["version"] = 1;
  j["kind"] = "gbdt";
  j["loss"] = to_string(m.loss);
  j["categorical_mode"] = to_string(m.cat_mode);
  j["learning_rate"] = m.learning_rate;
  j["base_score"] = m.base_score;
  j["best_iteration"] = m.best_iteration;
  j["columns"] = kinds_json(m.kinds);
  j["gains"] = m.gains;
  json ts = json::object();
  for (const auto& [c, stat] : m.target_stats) {
    json s;
    s["prior"] = stat.prior;
    s["a"] = stat.a;
    json cats = json::array();
    for (const auto& [code, sc] : stat.per_category) cats.push_back({code, sc.first, sc.second});
    s["categories"] = std::move(cats);
    ts[std::to_string(c)] = std::move(s);
  }
  j["target_stats"] = std::move(ts);
  json trees = json::array();
  for (const Tree& t : m.trees) trees.push_back(tree_json(t));
  j["trees"] = std::move(trees);
  return j.dump();
}

std::string to_json(const ForestModel& m) {
  json j;
  j["format"] = "irkit.trees";
  j["version"] = 1;
  j["kind"] = "forest";
  j["feature_rate"] = m.feature_rate;
  j["columns"] = kinds_json(m.kinds);
  j["gains"] = m.gains;
  j["tree_seeds"] = m.tree_seeds;
  json trees = json::array();
  for (const Tree& t : m.trees) trees.push_back(tree_json(t));
  j["trees"] = std::move(trees);
  return j.dump();
}

GbdtModel gbdt_from_json(std::string_view text) {
  const json j = json::parse(text);
  check_header(j, "gbdt");
  GbdtModel m;
  m.loss = j.at("loss").get<std::string>() == "logistic" ? Loss::Logistic : Loss::Squared;
  m.cat_mode = j.at("categorical_mode").get<std::string>() == "one-hot"
                   ? CategoricalMode::OneHot
                   : CategoricalMode::OrderedTarget;
  m.learning_rate = j.at("learning_rate").get<double>();
  m.base_score = j.at("base_score").get<double>();
  m.best_iteration = j.value("best_iteration", std::size_t{0});
  m.kinds = kinds_from(j.at("columns"));
  m.gains = j.at("gains").get<std::vector<double>>();
  for (const auto& [key, s] : j.at("target_stats").items()) {
    TargetStatistics ts;
    ts.prior = s.at("prior").get<double>();
    ts.a = s.at("a").get<double>();
    for (const auto& c : s.at("categories")) {
      ts.per_category[c.at(0).get<int>()] = {c.at(1).get<double>(), c.at(2).get<double>()};
    }
    m.target_stats[static_cast<std::size_t>(std::stoul(key))] = std::move(ts);
  }
  for (const auto& t : j.at("trees")) m.trees.push_back(tree_from(t));
  return m;
}

ForestModel forest_from_json(std::string_view text) {
  const json j = json::parse(text);
  check_header(j, "forest");
  ForestModel m;
  m.feature_rate = j.at("feature_rate").get<double>();
  m.kinds = kinds_from(j.at("columns"));
  m.gains = j.at("gains").get<std::vector<double>>();
  m.tree_seeds = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
  for (const auto& t : j.at("trees")) m.trees.push_back(tree_from(t));
  return m;
}

}  // namespace irkit::trees
