#include "irkit/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "irkit/errors.hpp"
#include "json.hpp"

namespace irkit::nets {

using num::Matrix;
using num::Tape;
using num::Var;
using nlohmann::json;

// ---------------------------------------------------------------------------
// B-splines

namespace {

void check_knots(std::span<const double> knots, std::size_t order) {
  if (order < 1) throw ConfigError("bspline: order must be >= 1");
  if (knots.size() <= order) {
    throw ConfigError("bspline: need more than " + std::to_string(order) + " knots, got " +
                      std::to_string(knots.size()));
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      throw ConfigError("bspline: knots must be strictly increasing (index " + std::to_string(i) +
                        ")");
    }
  }
}

// Cox-de Boor with the order-1 indicator fixed to `cell`; writes the
// m - order values of that piece into `out`.
void piece_into(double x, std::span<const double> t, std::size_t order, std::size_t cell,
                std::vector<double>& work, std::span<double> out) {
  const std::size_t m = t.size();
  work.assign(m - 1, 0.0);
  if (cell < m - 1) work[cell] = 1.0;
  for (std::size_t r = 2; r <= order; ++r) {
    for (std::size_t i = 0; i + r < m; ++i) {
      const double a = (x - t[i]) / (t[i + r - 1] - t[i]);
      const double b = (t[i + r] - x) / (t[i + r] - t[i + 1]);
      work[i] = a * work[i] + b * work[i + 1];
    }
  }
  std::copy_n(work.begin(), m - order, out.begin());
}

void derivative_into(double x, std::span<const double> t, std::size_t order, std::size_t cell,
                     std::vector<double>& work, std::span<double> out) {
  const std::size_t m = t.size(), n = m - order;
  if (order == 1) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
    return;
  }
  std::vector<double> lower(m - order + 1);
  piece_into(x, t, order - 1, cell, work, lower);
  const double k1 = static_cast<double>(order - 1);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = k1 * (lower[i] / (t[i + order - 1] - t[i]) -
                   lower[i + 1] / (t[i + order] - t[i + 1]));
  }
}

}  // namespace

std::vector<double> bspline_piece(double x, std::span<const double> knots, std::size_t order,
                                  std::size_t cell) {
  check_knots(knots, order);
  std::vector<double> work, out(knots.size() - order);
  piece_into(x, knots, order, cell, work, out);
  return out;
}

std::vector<double> bspline_piece_derivative(double x, std::span<const double> knots,
                                             std::size_t order, std::size_t cell) {
  check_knots(knots, order);
  std::vector<double> work, out(knots.size() - order);
  derivative_into(x, knots, order, cell, work, out);
  return out;
}

std::vector<double> bspline_basis(double x, std::span<const double> knots, std::size_t order) {
  check_knots(knots, order);
  const std::size_t m = knots.size();
  std::vector<double> out(m - order, 0.0);
  if (!(x >= knots.front()) || x > knots.back()) return out;
  std::size_t cell;
  if (x == knots[m - order]) {
    cell = m - order - 1;
  } else {
    cell = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), x) -
                                    knots.begin()) -
           1;
    if (cell >= m - 1) return out;
  }
  std::vector<double> work;
  piece_into(x, knots, order, cell, work, out);
  return out;
}

std::vector<double> SplineGrid::knots() const {
  if (size < 1 || order < 1 || !(hi > lo)) {
    throw ConfigError("spline grid needs size >= 1, order >= 1 and lo < hi");
  }
  const double h = (hi - lo) / static_cast<double>(size);
  std::vector<double> t;
  const auto pad = static_cast<std::ptrdiff_t>(order) - 1;
  for (std::ptrdiff_t i = -pad; i <= static_cast<std::ptrdiff_t>(size) + pad; ++i) {
    t.push_back(i == static_cast<std::ptrdiff_t>(size) ? hi : lo + h * static_cast<double>(i));
  }
  return t;
}

void spline_features(const SplineGrid& grid, std::span<const double> knots, double x,
                     std::span<double> basis, std::span<double> slope) {
  const std::size_t k = grid.order;
  const double xc = std::clamp(x, grid.lo, grid.hi);
  auto cell = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), xc) -
                                       knots.begin());
  cell = std::clamp<std::size_t>(cell == 0 ? 0 : cell - 1, k - 1, k - 2 + grid.size);
  thread_local std::vector<double> work, d;
  d.resize(grid.basis_count());
  piece_into(xc, knots, k, cell, work, basis);
  derivative_into(xc, knots, k, cell, work, d);
  const double dx = x - xc;
  for (std::size_t j = 0; j < d.size(); ++j) {
    basis[j] += d[j] * dx;
    if (!slope.empty()) slope[j] = d[j];
  }
}

// ---------------------------------------------------------------------------
// KAN layer

Var kan_layer(Tape& tape, Var x, Var base, Var scale, Var coef, const SplineGrid& grid) {
  const Matrix& X = tape.value(x);
  const Matrix& Wb = tape.value(base);
  const Matrix& S = tape.value(scale);
  const Matrix& C = tape.value(coef);
  const std::size_t B = X.rows(), in = X.cols(), out = Wb.cols(), nb = grid.basis_count();
  if (Wb.rows() != in || S.rows() != in || S.cols() != out || C.rows() != in * nb ||
      C.cols() != out) {
    throw ShapeError("kan_layer: input " + X.shape_string() + " with base " + Wb.shape_string() +
                     ", scale " + S.shape_string() + ", coef " + C.shape_string());
  }
  const std::vector<double> knots = grid.knots();
  Matrix phi(B, in * nb), dphi(B, in * nb), sx(B, in), dsx(B, in);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < in; ++i) {
      const double v = X(b, i);
      auto row = phi.row(b).subspan(i * nb, nb);
      auto drow = dphi.row(b).subspan(i * nb, nb);
      spline_features(grid, knots, v, row, drow);
      const double sg = 1.0 / (1.0 + std::exp(-v));
      sx(b, i) = v * sg;
      dsx(b, i) = sg * (1.0 + v * (1.0 - sg));
    }
  }
  Matrix ceff(in * nb, out);
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t o = 0; o < out; ++o) ceff(i * nb + j, o) = C(i * nb + j, o) * S(i, o);
    }
  }
  Matrix y = num::matmul(sx, Wb);
  y += num::matmul(phi, ceff);
  const Var parents[] = {x, base, scale, coef};
  return tape.push(
      std::move(y), parents,
      [=, phi = std::move(phi), dphi = std::move(dphi), sx = std::move(sx), dsx = std::move(dsx),
       ceff = std::move(ceff)](Tape& t, const Matrix& g) {
        const Matrix& Wb = t.value(base);
        const Matrix& S = t.value(scale);
        const Matrix& C = t.value(coef);
        if (t.requires_grad(base)) t.grad_ref(base) += num::matmul_tn(sx, g);
        if (t.requires_grad(scale) || t.requires_grad(coef)) {
          const Matrix dc = num::matmul_tn(phi, g);
          if (t.requires_grad(coef)) {
            Matrix& gc = t.grad_ref(coef);
            for (std::size_t r = 0; r < dc.rows(); ++r) {
              for (std::size_t o = 0; o < out; ++o) gc(r, o) += dc(r, o) * S(r / nb, o);
            }
          }
          if (t.requires_grad(scale)) {
            Matrix& gs = t.grad_ref(scale);
            for (std::size_t r = 0; r < dc.rows(); ++r) {
              for (std::size_t o = 0; o < out; ++o) gs(r / nb, o) += dc(r, o) * C(r, o);
            }
          }
        }
        if (t.requires_grad(x)) {
          const Matrix gb = num::matmul_nt(g, Wb);
          const Matrix gp = num::matmul_nt(g, ceff);
          Matrix& gx = t.grad_ref(x);
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < in; ++i) {
              double s = gb(b, i) * dsx(b, i);
              for (std::size_t j = 0; j < nb; ++j) s += gp(b, i * nb + j) * dphi(b, i * nb + j);
              gx(b, i) += s;
            }
          }
        }
      },
      "kan_layer");
}

// ---------------------------------------------------------------------------
// Transformer block

Var transformer_block(Tape& t, Var x, std::size_t tokens, std::size_t heads, const BlockVars& p,
                      Matrix* probs, const std::function<Var(Var)>& drop) {
  auto lin = [&](Var a, Var w, Var b) { return t.add_row(t.matmul(a, w), b); };
  const Var h = t.layer_norm(x, p.ln1_g, p.ln1_b);
  const Var a = t.attention(lin(h, p.q_w, p.q_b), t.matmul(h, p.k_w), lin(h, p.v_w, p.v_b), tokens,
                            heads, probs);
  x = t.add(x, lin(a, p.o_w, p.o_b));
  Var f = t.gelu(lin(t.layer_norm(x, p.ln2_g, p.ln2_b), p.ff1_w, p.ff1_b));
  if (drop) f = drop(f);
  return t.add(x, lin(f, p.ff2_w, p.ff2_b));
}

// ---------------------------------------------------------------------------
// Layout and batches

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::Mlp: return "mlp";
    case Arch::TabTransformer: return "tabtransformer";
    case Arch::TabKanet: return "tabkanet";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  if (text == "mlp") return Arch::Mlp;
  if (text == "tabtransformer") return Arch::TabTransformer;
  if (text == "tabkanet") return Arch::TabKanet;
  throw ConfigError("unknown architecture '" + std::string(text) +
                    "' (expected mlp, tabtransformer, tabkanet)");
}

FeatureLayout FeatureLayout::from(const FeatureEncoder& encoder, const FeatureMask& mask) {
  FeatureLayout l;
  l.numeric = mask.numeric_slots().size();
  for (std::size_t s : mask.categorical_slots()) l.vocab.push_back(encoder.vocab_size(s - kNumNumeric));
  return l;
}

NetBatch make_batch(std::span<const FeatureVector> rows, const FeatureMask& mask) {
  const auto num_slots = mask.numeric_slots();
  const auto cat_slots = mask.categorical_slots();
  NetBatch b;
  b.numeric = Matrix(rows.size(), num_slots.size());
  b.categorical.reserve(rows.size() * cat_slots.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < num_slots.size(); ++j) b.numeric(r, j) = rows[r].numeric[num_slots[j]];
    for (std::size_t s : cat_slots) b.categorical.push_back(rows[r].categorical[s - kNumNumeric]);
  }
  return b;
}

NetBatch slice(const NetBatch& b, std::span<const std::size_t> rows, std::size_t n_categorical) {
  NetBatch out;
  out.numeric = Matrix(rows.size(), b.numeric.cols());
  out.categorical.reserve(rows.size() * n_categorical);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy(b.numeric.row(r).begin(), b.numeric.row(r).end(), out.numeric.row(i).begin());
    for (std::size_t c = 0; c < n_categorical; ++c) {
      out.categorical.push_back(b.categorical[r * n_categorical + c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// NetModel

void validate(const NetConfig& c, const FeatureLayout& layout) {
  if (c.dim == 0 || c.hidden == 0) throw ConfigError("net config: dim and hidden must be >= 1");
  if (c.heads == 0 || c.dim % c.heads != 0) {
    throw ConfigError("net config: heads=" + std::to_string(c.heads) + " must divide dim=" +
                      std::to_string(c.dim));
  }
  if (c.arch != Arch::Mlp && c.layers == 0) throw ConfigError("net config: layers must be >= 1");
  if (c.ffn_mult == 0) throw ConfigError("net config: ffn_mult must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("net config: dropout must be in [0, 1)");
  (void)c.grid.knots();
  if (layout.numeric + layout.vocab.size() == 0) throw ConfigError("net config: no active features");
  for (std::size_t v : layout.vocab) {
    if (v == 0) throw ConfigError("net config: categorical vocabulary is empty");
  }
}

void NetModel::add(std::string name, Matrix value) {
  index_[name] = params_.size();
  params_.emplace_back(std::move(name), std::move(value));
}

std::size_t NetModel::index(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return it->second;
}

num::Parameter& NetModel::param(std::string_view name) { return params_[index(name)]; }
const num::Parameter& NetModel::param(std::string_view name) const { return params_[index(name)]; }

std::size_t NetModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t NetModel::token_count() const {
  switch (config_.arch) {
    case Arch::Mlp: return 0;
    case Arch::TabTransformer: return layout_.vocab.size();
    case Arch::TabKanet: return layout_.numeric + layout_.vocab.size();
  }
  return 0;
}

void NetModel::fill_parameters(double value) {
  for (auto& p : params_) p.value.fill(value);
}

void NetModel::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) p.frozen = frozen;
  }
}

namespace {

Matrix normal_matrix(num::Rng& rng, std::size_t r, std::size_t c, double sd) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal(0.0, sd);
  return m;
}

Matrix xavier(num::Rng& rng, std::size_t in, std::size_t out) {
  return normal_matrix(rng, in, out, std::sqrt(2.0 / static_cast<double>(in + out)));
}

}  // namespace

NetModel NetModel::build(const NetConfig& config, const FeatureLayout& layout) {
  validate(config, layout);
  NetModel m;
  m.config_ = config;
  m.layout_ = layout;
  m.knots_ = config.grid.knots();
  num::Rng rng(config.seed);
  const std::size_t d = config.dim, out = config.classification ? 2 : 1;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t o) {
    m.add(name + ".w", xavier(rng, in, o));
    m.add(name + ".b", Matrix(1, o));
  };
  auto norm = [&](const std::string& name, std::size_t width) {
    m.add(name + ".g", Matrix(1, width, 1.0));
    m.add(name + ".b", Matrix(1, width));
  };

  if (config.arch == Arch::Mlp) {
    for (std::size_t c = 0; c < layout.vocab.size(); ++c) {
      m.add("emb." + std::to_string(c), normal_matrix(rng, layout.vocab[c], config.mlp_embed_dim, 1.0));
    }
    const std::size_t in = layout.numeric + layout.vocab.size() * config.mlp_embed_dim;
    linear("mlp.0", in, config.hidden);
    linear("mlp.1", config.hidden, config.hidden);
    linear("out", config.hidden, out);
    return m;
  }

  if (config.arch == Arch::TabKanet) {
    const std::size_t nb = config.grid.basis_count();
    for (std::size_t i = 0; i < layout.numeric; ++i) {
      const std::string p = "kan." + std::to_string(i);
      m.add(p + ".base", normal_matrix(rng, 1, d, 0.5));
      m.add(p + ".scale", Matrix(1, d, 1.0));
      m.add(p + ".coef", normal_matrix(rng, nb, d, 0.1));
    }
  }
  for (std::size_t c = 0; c < layout.vocab.size(); ++c) {
    m.add("emb." + std::to_string(c), normal_matrix(rng, layout.vocab[c], d, 1.0));
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "blk." + std::to_string(l);
    norm(p + ".ln1", d);
    linear(p + ".q", d, d);
    m.add(p + ".k.w", xavier(rng, d, d));
    linear(p + ".v", d, d);
    linear(p + ".o", d, d);
    norm(p + ".ln2", d);
    linear(p + ".ff1", d, d * config.ffn_mult);
    linear(p + ".ff2", d * config.ffn_mult, d);
  }
  const std::size_t tokens = m.token_count();
  if (tokens > 0) norm("enc_ln", d);
  std::size_t head_in = tokens * d;
  if (config.arch == Arch::TabTransformer && layout.numeric > 0) {
    norm("num_ln", layout.numeric);
    head_in += layout.numeric;
  }
  linear("head", head_in, config.hidden);
  linear("out", config.hidden, out);
  return m;
}

// Per-forward state: bound parameter Vars plus helpers.
struct NetModel::Scope {
  const NetModel& m;
  Tape& t;
  std::vector<Var> vars;
  ForwardTrace* trace;
  num::Rng* rng;

  Var p(std::string_view name) const { return vars[m.index(name)]; }

  Var linear(Var x, const std::string& name) {
    return t.add_row(t.matmul(x, p(name + ".w")), p(name + ".b"));
  }
  Var norm(Var x, const std::string& name) {
    return t.layer_norm(x, p(name + ".g"), p(name + ".b"));
  }
  Var dropout(Var x) {
    const double rate = m.config_.dropout;
    if (rng == nullptr || rate <= 0.0) return x;
    const Matrix& v = t.value(x);
    Matrix mask(v.rows(), v.cols());
    for (double& e : mask.data()) e = rng->uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
    return t.mul(x, t.constant(std::move(mask)));
  }

  Var block(Var x, std::size_t tokens, std::size_t l) {
    const std::string b = "blk." + std::to_string(l);
    t.set_scope(b);
    BlockVars v{p(b + ".ln1.g"), p(b + ".ln1.b"), p(b + ".q.w"),   p(b + ".q.b"),
                p(b + ".k.w"),   p(b + ".v.w"),   p(b + ".v.b"),
                p(b + ".o.w"),   p(b + ".o.b"),   p(b + ".ln2.g"), p(b + ".ln2.b"),
                p(b + ".ff1.w"), p(b + ".ff1.b"), p(b + ".ff2.w"), p(b + ".ff2.b")};
    Matrix* probs = nullptr;
    if (trace != nullptr) {
      trace->attention.emplace_back();
      probs = &trace->attention.back();
    }
    return transformer_block(t, x, tokens, m.config_.heads, v, probs,
                             [this](Var a) { return dropout(a); });
  }
};

Var NetModel::forward(Tape& tape, const NetBatch& batch, std::span<const Var> bound,
                      ForwardTrace* trace, num::Rng* dropout_rng) const {
  const std::size_t B = batch.rows(), n_cat = layout_.vocab.size();
  if (batch.numeric.cols() != layout_.numeric || batch.categorical.size() != B * n_cat) {
    throw ShapeError("net forward: batch has " + std::to_string(batch.numeric.cols()) +
                     " numerics and " + std::to_string(batch.categorical.size()) +
                     " codes; model expects " + std::to_string(layout_.numeric) + " numerics and " +
                     std::to_string(n_cat) + " codes per row");
  }
  if (B == 0) throw ShapeError("net forward: empty batch");
  if (!bound.empty() && bound.size() != params_.size()) {
    throw ShapeError("net forward: expected " + std::to_string(params_.size()) + " bound vars");
  }
  Scope s{*this, tape, {}, trace, dropout_rng};
  if (bound.empty()) {
    s.vars.reserve(params_.size());
    // Tape::param binds by pointer but never writes the value.
    for (const auto& p : params_) s.vars.push_back(tape.param(const_cast<num::Parameter&>(p)));
  } else {
    s.vars.assign(bound.begin(), bound.end());
  }
  if (trace != nullptr) {
    trace->attention.clear();
    trace->tokens = token_count();
  }

  tape.set_scope("input");
  const Var num = tape.constant(batch.numeric);
  auto codes = [&](std::size_t c) {
    std::vector<int> col(B);
    for (std::size_t r = 0; r < B; ++r) col[r] = batch.categorical[r * n_cat + c];
    return col;
  };

  if (config_.arch == Arch::Mlp) {
    tape.set_scope("mlp");
    std::vector<Var> parts;
    if (layout_.numeric > 0) parts.push_back(num);
    for (std::size_t c = 0; c < n_cat; ++c) {
      parts.push_back(tape.embedding(s.p("emb." + std::to_string(c)), codes(c)));
    }
    Var h = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
    h = s.dropout(tape.relu(s.linear(h, "mlp.0")));
    h = s.dropout(tape.relu(s.linear(h, "mlp.1")));
    tape.set_scope("out");
    return s.linear(h, "out");
  }

  std::vector<Var> tokens;
  if (config_.arch == Arch::TabKanet) {
    for (std::size_t i = 0; i < layout_.numeric; ++i) {
      const std::string p = "kan." + std::to_string(i);
      tape.set_scope(p);
      const std::size_t col[] = {i};
      tokens.push_back(kan_layer(tape, tape.select_cols(num, col), s.p(p + ".base"),
                                 s.p(p + ".scale"), s.p(p + ".coef"), config_.grid));
    }
  }
  tape.set_scope("embedding");
  for (std::size_t c = 0; c < n_cat; ++c) {
    tokens.push_back(tape.embedding(s.p("emb." + std::to_string(c)), codes(c)));
  }

  std::vector<Var> head_parts;
  const std::size_t T = tokens.size();
  if (T > 0) {
    Var x = tape.stack_tokens(tokens);
    for (std::size_t l = 0; l < config_.layers; ++l) x = s.block(x, T, l);
    tape.set_scope("encoder");
    x = s.norm(x, "enc_ln");
    head_parts.push_back(tape.reshape(x, B, T * config_.dim));
  }
  if (config_.arch == Arch::TabTransformer && layout_.numeric > 0) {
    tape.set_scope("numeric");
    head_parts.push_back(s.norm(num, "num_ln"));
  }
  tape.set_scope("head");
  Var h = head_parts.size() == 1 ? head_parts[0] : tape.concat_cols(head_parts);
  h = s.dropout(tape.relu(s.linear(h, "head")));
  tape.set_scope("out");
  return s.linear(h, "out");
}

Var NetModel::loss(Tape& tape, const NetBatch& batch, std::span<const double> targets,
                   std::span<const Var> bound, num::Rng* dropout_rng) const {
  if (targets.size() != batch.rows()) throw ShapeError("net loss: target length mismatch");
  const Var out = forward(tape, batch, bound, nullptr, dropout_rng);
  tape.set_scope("loss");
  if (config_.classification) {
    std::vector<int> labels(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) labels[i] = targets[i] > 0.5 ? 1 : 0;
    return tape.cross_entropy(out, labels);
  }
  return tape.mse(out, targets);
}

Matrix NetModel::predict(const NetBatch& batch, ForwardTrace* trace) const {
  Tape tape;
  return tape.value(forward(tape, batch, {}, trace, nullptr));
}

std::vector<double> NetModel::predict_scores(const NetBatch& batch) const {
  const Matrix out = predict(batch);
  std::vector<double> s(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    s[r] = config_.classification ? 1.0 / (1.0 + std::exp(out(r, 0) - out(r, 1))) : out(r, 0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'I', 'R', 'K', 'N', 'E', 'T', '\0', '\1'};

json config_json(const NetConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"classification", c.classification},
          {"dim", c.dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ffn_mult", c.ffn_mult},
          {"hidden", c.hidden},
          {"mlp_embed_dim", c.mlp_embed_dim},
          {"grid", {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"size", c.grid.size}, {"order", c.grid.order}}},
          {"dropout", c.dropout},
          {"seed", c.seed}};
}

NetConfig config_from(const json& j) {
  NetConfig c;
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.classification = j.at("classification").get<bool>();
  c.dim = j.at("dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.mlp_embed_dim = j.at("mlp_embed_dim").get<std::size_t>();
  const json& g = j.at("grid");
  c.grid = {g.at("lo").get<double>(), g.at("hi").get<double>(), g.at("size").get<std::size_t>(),
            g.at("order").get<std::size_t>()};
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string NetModel::serialize() const {
  json header;
  header["format"] = "irkit.net";
  header["version"] = 1;
  header["config"] = config_json(config_);
  header["layout"] = {{"numeric", layout_.numeric}, {"vocab", layout_.vocab}};
  json shapes = json::array();
  for (const auto& p : params_) {
    shapes.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()},
                      {"frozen", p.frozen}});
  }
  header["params"] = std::move(shapes);
  header["parameter_count"] = parameter_count();
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, h.size());
  out += h;
  for (const auto& p : params_) {
    for (double v : p.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NetModel NetModel::deserialize(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != std::string_view(kMagic, 8)) {
    throw SchemaError("not an irkit.net blob (bad magic)");
  }
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw SchemaError("irkit.net blob: truncated header");
  const json header = json::parse(bytes.substr(16, hlen));
  if (header.value("format", "") != "irkit.net" || header.value("version", 0) != 1) {
    throw SchemaError("irkit.net blob: unsupported format or version");
  }
  FeatureLayout layout;
  layout.numeric = header.at("layout").at("numeric").get<std::size_t>();
  layout.vocab = header.at("layout").at("vocab").get<std::vector<std::size_t>>();
  NetModel m = build(config_from(header.at("config")), layout);
  const json& shapes = header.at("params");
  if (shapes.size() != m.params_.size()) throw SchemaError("irkit.net blob: parameter list differs");
  std::size_t at = 16 + hlen;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto& p = m.params_[i];
    if (shapes[i].at("name").get<std::string>() != p.name ||
        shapes[i].at("rows").get<std::size_t>() != p.value.rows() ||
        shapes[i].at("cols").get<std::size_t>() != p.value.cols()) {
      throw SchemaError("irkit.net blob: parameter " + p.name + " has unexpected shape");
    }
    p.frozen = shapes[i].value("frozen", false);
    if (at + 8 * p.value.size() > bytes.size()) throw SchemaError("irkit.net blob: truncated payload");
    for (double& v : p.value.data()) {
      v = std::bit_cast<double>(get_u64(bytes, at));
      at += 8;
    }
  }
  if (at != bytes.size()) throw SchemaError("irkit.net blob: trailing bytes");
  return m;
}

void NetModel::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const std::string blob = serialize();
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

NetModel NetModel::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(blob);
}

}  // namespace irkit::nets
