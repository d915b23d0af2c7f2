#include "irkit/harness/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "irkit/errors.hpp"
#include "json.hpp"

namespace irkit::harness {

using nlohmann::json;
using num::Matrix;

namespace {

constexpr std::size_t kPredictChunk = 512;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nets::Arch arch_of(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return nets::Arch::Mlp;
    case ModelKind::TabTransformer: return nets::Arch::TabTransformer;
    case ModelKind::TabKanet: return nets::Arch::TabKanet;
    default: throw ConfigError("not a network model: " + std::string(to_string(k)));
  }
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool has_both_classes(std::span<const double> y) {
  bool pos = false, neg = false;
  for (double v : y) (v == 1.0 ? pos : neg) = true;
  return pos && neg;
}

double cross_entropy(std::span<const double> p, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-15, 1.0 - 1e-15);
    s -= y[i] == 1.0 ? std::log(q) : std::log(1.0 - q);
  }
  return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

double mse(std::span<const double> p, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

// Tracks the validation metric; higher is better unless `lower_better`.
struct EarlyStop {
  bool lower_better = false;
  std::size_t patience = 0;
  double best = 0.0;
  std::size_t best_epoch = 0;
  bool any = false;

  // Returns true if `value` at `epoch` (1-based) is a new best.
  bool update(double value, std::size_t epoch) {
    const bool better = !any || (lower_better ? value < best : value > best);
    if (better) {
      best = value;
      best_epoch = epoch;
      any = true;
    }
    return better;
  }
  bool stop(std::size_t epoch) const { return epoch - best_epoch >= patience; }
};

// Validation metric: AUC for classifiers (negated loss when a class is
// missing), RMSE in target units for regressors.
struct Validator {
  bool classification;
  std::span<const double> y;
  bool auc_ok;

  double metric(std::span<const double> pred) const {
    if (!classification) return std::sqrt(mse(pred, y));
    return auc_ok ? auc(pred, y) : -cross_entropy(pred, y);
  }
};

std::vector<FeatureVector> standardize_all(const FeatureEncoder& enc,
                                           std::span<const FeatureVector> raw) {
  std::vector<FeatureVector> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(enc.standardize(r));
  return out;
}

std::vector<double> predict_net(const nets::NetModel& net, const nets::NetBatch& batch) {
  const std::size_t n = batch.rows(), n_cat = net.layout().vocab.size();
  std::vector<double> out;
  out.reserve(n);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    idx.resize(std::min(kPredictChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto part = net.predict_scores(nets::slice(batch, idx, n_cat));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

LinearModel fit_linear(const TrainConfig& cfg, const FeatureEncoder& enc, const TaskData& train,
                       const TaskData& val, TrainingHistory& hist) {
  LinearModel lm;
  lm.logistic = is_classification(cfg.task);
  lm.mask = enc.mask();
  for (std::size_t s : lm.mask.categorical_slots()) lm.vocab.push_back(enc.vocab_size(s - kNumNumeric));

  const auto xs = standardize_all(enc, train.x);
  const auto xv = standardize_all(enc, val.x);
  const std::size_t n = xs.size();
  const std::size_t p = lm.design_row(xs.empty() ? FeatureVector{} : xs[0]).size() + 1;
  Eigen::MatrixXd X(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = lm.design_row(xs[i]);
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < row.size(); ++j) X(i, j + 1) = row[j];
  }
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(train.y.data(), n);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(p, p) * (cfg.ridge * static_cast<double>(n));
  penalty(0, 0) = 0.0;

  auto unpack = [&](const Eigen::VectorXd& b) {
    lm.intercept = b(0);
    lm.coef.assign(b.data() + 1, b.data() + p);
  };
  Validator validator{lm.logistic, val.y, lm.logistic && has_both_classes(val.y)};
  auto val_preds = [&] {
    std::vector<double> out;
    out.reserve(xv.size());
    for (const auto& v : xv) out.push_back(lm.predict(v));
    return out;
  };
  auto record = [&](double train_loss) {
    const auto pv = val_preds();
    hist.train_loss.push_back(train_loss);
    hist.val_loss.push_back(lm.logistic ? cross_entropy(pv, val.y) : mse(pv, val.y));
    hist.val_metric.push_back(val.y.empty() ? 0.0 : validator.metric(pv));
    ++hist.epochs;
  };

  if (!lm.logistic) {
    const Eigen::VectorXd b = (X.transpose() * X + penalty).ldlt().solve(X.transpose() * y);
    if (!b.allFinite()) throw NumericFault("linear regression: non-finite solution");
    unpack(b);
    record((X * b - y).squaredNorm() / static_cast<double>(n));
    hist.best_epoch = 1;
    return lm;
  }

  // IRLS with step halving on the penalised negative log-likelihood.
  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X * b;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += std::log1p(std::exp(-std::abs(eta(i)))) + std::max(eta(i), 0.0) - y(i) * eta(i);
    }
    return s / static_cast<double>(n) + 0.5 * b.dot(penalty * b) / static_cast<double>(n);
  };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  const double prior = std::clamp(mean_of(train.y), 1e-6, 1.0 - 1e-6);
  b(0) = std::log(prior / (1.0 - prior));
  double obj = objective(b);
  EarlyStop es{false, cfg.patience};
  Eigen::VectorXd best = b;
  for (std::size_t it = 1; it <= cfg.linear_max_iter; ++it) {
    const Eigen::VectorXd eta = X * b;
    Eigen::VectorXd mu(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (y - mu) - penalty * b;
    const Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X + penalty;
    Eigen::VectorXd step = H.ldlt().solve(grad);
    if (!step.allFinite()) throw NumericFault("logistic regression: non-finite step at iteration " + std::to_string(it));
    double t = 1.0, next = objective(b + step);
    for (int k = 0; k < 30 && next > obj; ++k) {
      t *= 0.5;
      next = objective(b + t * step);
    }
    b += t * step;
    const double change = t * step.cwiseAbs().maxCoeff();
    obj = next;
    unpack(b);
    record(obj);
    if (val.y.empty()) {
      best = b;
      es.best_epoch = it;
    } else if (es.update(hist.val_metric.back(), it)) {
      best = b;
    }
    if (change < 1e-10 || (!val.y.empty() && es.stop(it))) break;
  }
  unpack(best);
  hist.best_epoch = es.best_epoch;
  return lm;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const nets::NetModel> fit_net(const TrainConfig& cfg, const FeatureEncoder& enc,
                                              const TaskData& train, const TaskData& val,
                                              double& target_mean, double& target_scale,
                                              TrainingHistory& hist) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.size() == 0) throw ConfigError("empty training set");
  const bool cls = is_classification(cfg.task);
  num::Rng rng(cfg.seed);
  nets::NetConfig nc = cfg.net;
  nc.arch = arch_of(cfg.model);
  nc.classification = cls;
  nc.seed = rng.fork_seed();
  auto net = std::make_shared<nets::NetModel>(
      nets::NetModel::build(nc, nets::FeatureLayout::from(enc, enc.mask())));
  const std::size_t n_cat = net->layout().vocab.size();

  const auto xs = standardize_all(enc, train.x);
  const auto xv = standardize_all(enc, val.x);
  const nets::NetBatch tb = nets::make_batch(xs, enc.mask());
  const nets::NetBatch vb = nets::make_batch(xv, enc.mask());

  target_mean = 0.0;
  target_scale = 1.0;
  if (!cls && cfg.standardize_target) {
    target_mean = mean_of(train.y);
    double ss = 0.0;
    for (double v : train.y) ss += (v - target_mean) * (v - target_mean);
    target_scale = std::sqrt(ss / static_cast<double>(train.size()));
    if (!(target_scale > 0.0)) target_scale = 1.0;
  }
  std::vector<double> ty(train.y.size());
  for (std::size_t i = 0; i < ty.size(); ++i) ty[i] = cls ? train.y[i] : (train.y[i] - target_mean) / target_scale;

  Optimizer opt(cfg.effective_optimizer());
  num::Rng shuffle_rng(rng.fork_seed());
  num::Rng dropout_rng(rng.fork_seed());
  const bool use_dropout = nc.dropout > 0.0;
  Validator validator{cls, val.y, cls && has_both_classes(val.y)};
  EarlyStop es{!cls, cfg.patience};
  std::vector<Matrix> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : net->params()) best.push_back(p.value);
  };
  snapshot();

  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<double> yb;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(perm));
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, perm.size() - start);
        const std::span<const std::size_t> rows(perm.data() + start, len);
        const nets::NetBatch batch = nets::slice(tb, rows, n_cat);
        yb.resize(len);
        for (std::size_t i = 0; i < len; ++i) yb[i] = ty[rows[i]];
        for (auto& p : net->params()) p.zero_grad();
        num::Tape tape;
        const num::Var loss = net->loss(tape, batch, yb, {}, use_dropout ? &dropout_rng : nullptr);
        total += tape.value(loss)(0, 0) * static_cast<double>(len);
        tape.backward(loss);
        opt.step(net->params());
      }
    } catch (const NumericFault& e) {
      throw NumericFault("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    hist.train_loss.push_back(total / static_cast<double>(perm.size()));
    hist.epochs = epoch;
    if (val.size() == 0) {
      snapshot();
      es.best_epoch = epoch;
      continue;
    }
    std::vector<double> pv;
    try {
      pv = predict_net(*net, vb);
    } catch (const NumericFault& e) {
      throw NumericFault("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (cls) {
      hist.val_loss.push_back(cross_entropy(pv, val.y));
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double z = (val.y[i] - target_mean) / target_scale;
        s += (pv[i] - z) * (pv[i] - z);
      }
      hist.val_loss.push_back(s / static_cast<double>(pv.size()));
      for (double& v : pv) v = v * target_scale + target_mean;
    }
    hist.val_metric.push_back(validator.metric(pv));
    if (es.update(hist.val_metric.back(), epoch)) snapshot();
    if (es.stop(epoch)) break;
  }
  for (std::size_t i = 0; i < best.size(); ++i) net->params()[i].value = best[i];
  hist.best_epoch = es.best_epoch;
  return net;
}

// ---------------------------------------------------------------------------

void fill_tree_history(const Model& m, const TaskData& val, TrainingHistory& hist) {
  if (val.size() == 0) return;
  const auto pv = m.predict(val.x);
  Validator validator{m.classification(), val.y, m.classification() && has_both_classes(val.y)};
  hist.val_metric.push_back(validator.metric(pv));
}

json linear_json(const LinearModel& lm) {
  return {{"logistic", lm.logistic}, {"coef", lm.coef}, {"intercept", lm.intercept},
          {"vocab", lm.vocab}, {"mask", lm.mask.names()}};
}

LinearModel linear_from_json(const json& j) {
  LinearModel lm;
  lm.logistic = j.at("logistic").get<bool>();
  lm.coef = j.at("coef").get<std::vector<double>>();
  lm.intercept = j.at("intercept").get<double>();
  lm.vocab = j.at("vocab").get<std::vector<std::size_t>>();
  lm.mask = FeatureMask::from_names(j.at("mask").get<std::vector<std::string>>());
  return lm;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw SchemaError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Forest: return "forest";
    case ModelKind::Xgboost: return "xgboost";
    case ModelKind::Catboost: return "catboost";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::TabTransformer: return "tabtransformer";
    case ModelKind::TabKanet: return "tabkanet";
  }
  return "?";
}

ModelKind parse_model(std::string_view text) {
  for (ModelKind k : kAllModels) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown model '" + std::string(text) +
                    "' (expected linear, forest, xgboost, catboost, mlp, tabtransformer or tabkanet)");
}

std::string display_name(ModelKind k, Task task) {
  switch (k) {
    case ModelKind::Linear:
      return is_classification(task) ? "Logistic Regression" : "Linear Regression";
    case ModelKind::Forest: return "Random Forest";
    case ModelKind::Xgboost: return "XGBoost";
    case ModelKind::Catboost: return "CatBoost";
    case ModelKind::Mlp: return "MLP";
    case ModelKind::TabTransformer: return "TabTransformer";
    case ModelKind::TabKanet: return "TabKANet";
  }
  return "?";
}

bool is_network(ModelKind k) {
  return k == ModelKind::Mlp || k == ModelKind::TabTransformer || k == ModelKind::TabKanet;
}

bool is_tree(ModelKind k) {
  return k == ModelKind::Forest || k == ModelKind::Xgboost || k == ModelKind::Catboost;
}

std::string_view to_string(LossKind l) {
  return l == LossKind::CrossEntropy ? "cross_entropy" : "mse";
}

LossKind TrainConfig::loss() const {
  return is_classification(task) ? LossKind::CrossEntropy : LossKind::MeanSquaredError;
}

OptimizerConfig TrainConfig::effective_optimizer() const {
  if (optimizer) return *optimizer;
  OptimizerConfig c;
  if (!is_classification(task)) {
    c.kind = OptimizerKind::Sgd;
    c.lr = 1e-4;
    c.weight_decay = 0.0;
  }
  return c;
}

std::string TrainConfig::canonical() const {
  std::ostringstream s;
  auto kv = [&](std::string_view k, const std::string& v) { s << k << '=' << v << '\n'; };
  kv("task", std::string(to_string(task)));
  kv("model", std::string(to_string(model)));
  std::string m;
  for (const auto& n : mask.names()) m += (m.empty() ? "" : ",") + n;
  kv("mask", m);
  kv("seed", std::to_string(seed));
  kv("loss", std::string(to_string(loss())));
  kv("threshold", fmt(threshold));
  kv("averaging", std::string(to_string(averaging)));
  kv("glucose_mg_per_mmol", fmt(target.glucose_mg_per_mmol));
  if (model == ModelKind::Linear) {
    kv("ridge", fmt(ridge));
    kv("linear_max_iter", std::to_string(linear_max_iter));
    kv("patience", std::to_string(patience));
  } else if (model == ModelKind::Forest) {
    kv("forest.n_trees", std::to_string(forest.n_trees));
    kv("forest.max_depth", std::to_string(forest.max_depth));
    kv("forest.min_leaf", fmt(forest.min_leaf));
    kv("forest.feature_rate", fmt(forest.feature_rate));
    kv("forest.bootstrap", forest.bootstrap ? "1" : "0");
  } else if (is_tree(model)) {
    kv("gbdt.n_trees", std::to_string(gbdt.n_trees));
    kv("gbdt.max_depth", std::to_string(gbdt.max_depth));
    kv("gbdt.learning_rate", fmt(gbdt.learning_rate));
    kv("gbdt.lambda", fmt(gbdt.lambda));
    kv("gbdt.min_leaf", fmt(gbdt.min_leaf));
    kv("gbdt.early_stop", gbdt.early_stop ? "1" : "0");
    kv("gbdt.patience", std::to_string(gbdt.patience));
    kv("gbdt.histogram_bins", std::to_string(gbdt.histogram_bins));
  } else {
    const OptimizerConfig o = effective_optimizer();
    kv("optimizer", std::string(to_string(o.kind)));
    kv("lr", fmt(o.lr));
    kv("beta1", fmt(o.beta1));
    kv("beta2", fmt(o.beta2));
    kv("eps", fmt(o.eps));
    kv("weight_decay", fmt(o.weight_decay));
    kv("batch_size", std::to_string(batch_size));
    kv("max_epochs", std::to_string(max_epochs));
    kv("patience", std::to_string(patience));
    kv("standardize_target", standardize_target ? "1" : "0");
    kv("net.dim", std::to_string(net.dim));
    kv("net.heads", std::to_string(net.heads));
    kv("net.layers", std::to_string(net.layers));
    kv("net.ffn_mult", std::to_string(net.ffn_mult));
    kv("net.hidden", std::to_string(net.hidden));
    kv("net.mlp_embed_dim", std::to_string(net.mlp_embed_dim));
    kv("net.grid", fmt(net.grid.lo) + ":" + fmt(net.grid.hi) + ":" + std::to_string(net.grid.size) +
                       ":" + std::to_string(net.grid.order));
    kv("net.dropout", fmt(net.dropout));
  }
  return s.str();
}

TaskData prepare(std::span<const ParticipantRecord> records, Task task,
                 const FeatureEncoder& encoder, const TargetOptions& target) {
  TaskData d;
  d.ids.reserve(records.size());
  d.x.reserve(records.size());
  d.y.reserve(records.size());
  for (const auto& r : records) {
    d.ids.push_back(r.id);
    d.x.push_back(encoder.encode_raw(r));
    d.y.push_back(derive_target(r, task, target));
  }
  return d;
}

std::vector<double> LinearModel::design_row(const FeatureVector& v) const {
  std::vector<double> row;
  for (std::size_t s : mask.numeric_slots()) row.push_back(v.numeric[s]);
  const auto cats = mask.categorical_slots();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    const std::size_t size = c < vocab.size() ? vocab[c] : 0;
    const int code = v.categorical[cats[c] - kNumNumeric];
    for (std::size_t k = 0; k < size; ++k) row.push_back(static_cast<int>(k) == code ? 1.0 : 0.0);
  }
  return row;
}

double LinearModel::predict(const FeatureVector& v) const {
  const auto row = design_row(v);
  if (row.size() != coef.size()) throw ShapeError("linear model: design width mismatch");
  double eta = intercept;
  for (std::size_t j = 0; j < row.size(); ++j) eta += coef[j] * row[j];
  return logistic ? 1.0 / (1.0 + std::exp(-eta)) : eta;
}

// ---------------------------------------------------------------------------

std::vector<double> Model::predict(std::span<const FeatureVector> raw) const {
  struct Visitor {
    const Model& m;
    std::span<const FeatureVector> raw;

    std::vector<double> operator()(const LinearModel& lm) const {
      std::vector<double> out;
      out.reserve(raw.size());
      for (const auto& r : raw) out.push_back(lm.predict(m.encoder.standardize(r)));
      return out;
    }
    std::vector<double> operator()(const trees::ForestModel& f) const {
      return f.predict(trees::design_from_features(raw, m.mask()).x);
    }
    std::vector<double> operator()(const trees::GbdtModel& g) const {
      return g.predict(trees::design_from_features(raw, m.mask()).x);
    }
    std::vector<double> operator()(const std::shared_ptr<const nets::NetModel>& net) const {
      if (!net) throw ConfigError("model has no network");
      auto out = predict_net(*net, nets::make_batch(standardize_all(m.encoder, raw), m.mask()));
      if (!m.classification()) {
        for (double& v : out) v = v * m.target_scale + m.target_mean;
      }
      return out;
    }
  };
  if (raw.empty()) return {};
  return std::visit(Visitor{*this, raw}, impl);
}

double Model::predict_one(const FeatureVector& raw) const {
  return predict(std::span<const FeatureVector>(&raw, 1)).front();
}

std::vector<double> Model::predict_records(std::span<const ParticipantRecord> records) const {
  return predict(encoder.encode_raw_all(records));
}

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json j = {{"format", "irkit.model"},
            {"schema_version", 1},
            {"kind", to_string(kind)},
            {"task", to_string(task)},
            {"fingerprint", fingerprint},
            {"target_mean", target_mean},
            {"target_scale", target_scale},
            {"encoder", json::parse(encoder.to_json())}};
  if (const auto* lm = std::get_if<LinearModel>(&impl)) {
    j["linear"] = linear_json(*lm);
  } else if (const auto* f = std::get_if<trees::ForestModel>(&impl)) {
    j["artifact"] = "model.json";
    write_file(dir / "model.json", trees::to_json(*f));
  } else if (const auto* g = std::get_if<trees::GbdtModel>(&impl)) {
    j["artifact"] = "model.json";
    write_file(dir / "model.json", trees::to_json(*g));
  } else {
    const auto& net = std::get<std::shared_ptr<const nets::NetModel>>(impl);
    j["artifact"] = "model.irknet";
    net->save(dir / "model.irknet");
  }
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

Model Model::load(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw SchemaError("model manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != "irkit.model") throw SchemaError("not a model bundle: " + dir.string());
  if (j.value("schema_version", 0) != 1) throw SchemaError("unsupported model bundle version");
  Model m;
  m.kind = parse_model(j.at("kind").get<std::string>());
  m.task = parse_task(j.at("task").get<std::string>());
  m.fingerprint = j.value("fingerprint", "");
  m.target_mean = j.value("target_mean", 0.0);
  m.target_scale = j.value("target_scale", 1.0);
  m.encoder = FeatureEncoder::from_json(j.at("encoder").dump());
  if (m.kind == ModelKind::Linear) {
    m.impl = linear_from_json(j.at("linear"));
  } else if (m.kind == ModelKind::Forest) {
    m.impl = trees::forest_from_json(read_file(dir / j.at("artifact").get<std::string>()));
  } else if (is_tree(m.kind)) {
    m.impl = trees::gbdt_from_json(read_file(dir / j.at("artifact").get<std::string>()));
  } else {
    m.impl = std::make_shared<const nets::NetModel>(
        nets::NetModel::load(dir / j.at("artifact").get<std::string>()));
  }
  return m;
}

// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const FeatureEncoder& encoder, const TaskData& train,
                  const TaskData& val) {
  if (!(config.mask == encoder.mask())) {
    throw ConfigError("train: feature mask differs from the encoder's mask");
  }
  if (train.size() == 0) throw ConfigError("train: empty training set");
  TrainResult res;
  Model& m = res.model;
  TrainingHistory& hist = res.history;
  m.kind = config.model;
  m.task = config.task;
  m.encoder = encoder;
  const bool cls = is_classification(config.task);
  hist.metric_name = cls ? "auc" : "rmse";
  num::Rng rng(config.seed);

  if (config.model == ModelKind::Linear) {
    m.impl = fit_linear(config, encoder, train, val, hist);
  } else if (is_tree(config.model)) {
    trees::LabeledData td{trees::design_from_features(train.x, encoder.mask()), train.y};
    if (config.model == ModelKind::Forest) {
      trees::ForestConfig fc = config.forest;
      fc.seed = rng.fork_seed();
      m.impl = trees::fit_forest(td, fc);
      hist.epochs = hist.best_epoch = 1;
    } else {
      trees::GbdtConfig gc = config.gbdt;
      gc.loss = cls ? trees::Loss::Logistic : trees::Loss::Squared;
      gc.cat_mode = config.model == ModelKind::Catboost ? trees::CategoricalMode::OrderedTarget
                                                        : trees::CategoricalMode::OneHot;
      gc.seed = rng.fork_seed();
      trees::LabeledData vd{trees::design_from_features(val.x, encoder.mask()), val.y};
      const bool use_val = val.size() > 0;
      if (!use_val) gc.early_stop = false;
      trees::GbdtModel g = trees::fit_gbdt(td, use_val ? &vd : nullptr, gc);
      hist.train_loss = g.train_loss;
      hist.val_loss = g.val_loss;
      hist.epochs = g.train_loss.empty() ? 0 : g.train_loss.size() - 1;
      hist.best_epoch = g.best_iteration;
      hist.warnings = g.warnings;
      m.impl = std::move(g);
    }
    fill_tree_history(m, val, hist);
  } else {
    m.impl = fit_net(config, encoder, train, val, m.target_mean, m.target_scale, hist);
  }
  if (cls && val.size() > 0 && !has_both_classes(val.y)) {
    hist.warnings.emplace_back("validation set has a single class; early stopping used the loss");
  }
  return res;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fingerprint(const TrainConfig& config, std::string_view data_manifest) {
  std::string text = config.canonical();
  text += "--\n";
  text += data_manifest;
  return fnv1a_hex(text);
}

std::vector<FeatureVector> sample_rows(std::span<const FeatureVector> rows, std::size_t n,
                                       std::uint64_t seed) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  num::Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<FeatureVector> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(rows[i]);
  return out;
}

void save_background(const std::filesystem::path& dir, std::span<const FeatureVector> rows) {
  std::filesystem::create_directories(dir);
  json jr = json::array();
  for (const FeatureVector& v : rows) {
    json row = json::array();
    for (std::size_t s = 0; s < kNumFeatures; ++s) row.push_back(v.get(s));
    jr.push_back(row);
  }
  const FeatureMask mask = rows.empty() ? FeatureMask::full() : rows.front().mask;
  json j = {{"format", "irkit.background"},
            {"schema_version", 1},
            {"features", mask.names()},
            {"rows", jr}};
  write_file(dir / "background.json", j.dump() + "\n");
}

std::vector<FeatureVector> load_background(const std::filesystem::path& dir) {
  const auto p = dir / "background.json";
  if (!std::filesystem::exists(p)) return {};
  json j;
  try {
    j = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw SchemaError("background " + p.string() + ": " + e.what());
  }
  if (j.value("format", "") != "irkit.background") throw SchemaError("not a background file: " + p.string());
  const auto mask = FeatureMask::from_names(j.at("features").get<std::vector<std::string>>());
  std::vector<FeatureVector> out;
  for (const auto& row : j.at("rows")) {
    if (row.size() != kNumFeatures) throw SchemaError("background row has wrong width: " + p.string());
    FeatureVector v;
    v.mask = mask;
    for (std::size_t s = 0; s < kNumFeatures; ++s) v.set(s, row[s].get<double>());
    out.push_back(v);
  }
  return out;
}

std::string bundle_hash(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + read_file(f) + "\n";
  return fnv1a_hex(all);
}

}  // namespace irkit::harness
