#include "irkit/numcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "irkit/errors.hpp"

namespace irkit::num {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var Tape::constant(Matrix value) {
  check_finite(value, scope_.empty() ? "constant" : scope_ + "/constant");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Tape::input(Matrix value) {
  check_finite(value, scope_.empty() ? "input" : scope_ + "/input");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var{nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  check_finite(p.value, "parameter " + p.name);
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, !p.frozen});
  return Var{nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::span<const Var> parents, BackwardFn backward,
               std::string_view op) {
  check_finite(value, scope_.empty() ? std::string(op) : scope_ + "/" + std::string(op));
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (Var p : parents) {
    node.parents.push_back(p.id);
    node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Matrix& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var output) {
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("backward: output must be scalar, got " + out.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  grad_ref(output)[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    // Callbacks only touch parent grads, and parents precede i.
    if (n.backward) n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.bound != nullptr && !n.bound->frozen && !n.grad.empty()) {
      if (n.bound->grad.rows() != n.grad.rows() || n.bound->grad.cols() != n.grad.cols()) {
        n.bound->grad = Matrix(n.grad.rows(), n.grad.cols());
      }
      n.bound->grad += n.grad;
    }
  }
}

Var Tape::unary(Var a, Matrix value, BackwardFn backward, std::string_view op) {
  const Var parents[] = {a};
  return push(std::move(value), parents, std::move(backward), op);
}

Var Tape::matmul(Var a, Var b) {
  Matrix out = num::matmul(value(a), value(b));
  const Var parents[] = {a, b};
  return push(std::move(out), parents,
              [a, b](Tape& t, const Matrix& g) {
                if (t.requires_grad(a)) t.grad_ref(a) += matmul_nt(g, t.value(b));
                if (t.requires_grad(b)) t.grad_ref(b) += matmul_tn(t.value(a), g);
              },
              "matmul");
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix out = value(a) + value(b);
  const Var parents[] = {a, b};
  return push(std::move(out), parents,
              [a, b](Tape& t, const Matrix& g) {
                if (t.requires_grad(a)) t.grad_ref(a) += g;
                if (t.requires_grad(b)) t.grad_ref(b) += g;
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Matrix out = value(a) - value(b);
  const Var parents[] = {a, b};
  return push(std::move(out), parents,
              [a, b](Tape& t, const Matrix& g) {
                if (t.requires_grad(a)) t.grad_ref(a) += g;
                if (t.requires_grad(b)) t.grad_ref(b) += (-1.0) * g;
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  Matrix out = hadamard(value(a), value(b));
  const Var parents[] = {a, b};
  return push(std::move(out), parents,
              [a, b](Tape& t, const Matrix& g) {
                if (t.requires_grad(a)) t.grad_ref(a) += hadamard(g, t.value(b));
                if (t.requires_grad(b)) t.grad_ref(b) += hadamard(g, t.value(a));
              },
              "mul");
}

Var Tape::scale(Var a, double s) {
  return unary(a, s * value(a),
               [a, s](Tape& t, const Matrix& g) { t.grad_ref(a) += s * g; }, "scale");
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& x = value(a);
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: row " + r.shape_string() + " does not broadcast over " +
                     x.shape_string());
  }
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += r[j];
  }
  const Var parents[] = {a, row};
  return push(std::move(out), parents,
              [a, row](Tape& t, const Matrix& g) {
                if (t.requires_grad(a)) t.grad_ref(a) += g;
                if (t.requires_grad(row)) {
                  Matrix& gr = t.grad_ref(row);
                  for (std::size_t i = 0; i < g.rows(); ++i) {
                    auto src = g.row(i);
                    for (std::size_t j = 0; j < src.size(); ++j) gr[j] += src[j];
                  }
                }
              },
              "add_row");
}

Var Tape::relu(Var a) {
  Matrix out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out),
               [a](Tape& t, const Matrix& g) {
                 const Matrix& x = t.value(a);
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (x[i] > 0.0) ga[i] += g[i];
                 }
               },
               "relu");
}

Var Tape::silu(Var a) {
  Matrix out = value(a);
  for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
  return unary(a, std::move(out),
               [a](Tape& t, const Matrix& g) {
                 const Matrix& x = t.value(a);
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double s = 1.0 / (1.0 + std::exp(-x[i]));
                   ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
                 }
               },
               "silu");
}

Var Tape::gelu(Var a) {
  Matrix out = value(a);
  for (double& v : out.data()) {
    v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  }
  return unary(a, std::move(out),
               [a](Tape& t, const Matrix& g) {
                 const Matrix& x = t.value(a);
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double v = x[i];
                   const double u = kGeluC * (v + 0.044715 * v * v * v);
                   const double th = std::tanh(u);
                   const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
                   ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
                 }
               },
               "gelu");
}

Var Tape::tanh(Var a) {
  Matrix out = value(a);
  for (double& v : out.data()) v = std::tanh(v);
  const std::size_t self = nodes_.size();
  return unary(a, std::move(out),
               [a, self](Tape& t, const Matrix& g) {
                 const Matrix& y = t.value(Var{self});
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
               },
               "tanh");
}

Var Tape::reshape(Var a, std::size_t rows, std::size_t cols) {
  return unary(a, value(a).reshaped(rows, cols),
               [a](Tape& t, const Matrix& g) {
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
               },
               "reshape");
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& src = value(p);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(src.row(i).begin(), src.row(i).end(), out.row(i).begin() + offset);
    }
    offset += src.cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), parts,
              [ids](Tape& t, const Matrix& g) {
                std::size_t off = 0;
                for (Var p : ids) {
                  const std::size_t c = t.value(p).cols();
                  if (t.requires_grad(p)) {
                    Matrix& gp = t.grad_ref(p);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
                    }
                  }
                  off += c;
                }
              },
              "concat_cols");
}

Var Tape::select_cols(Var a, std::span<const std::size_t> cols) {
  const Matrix& x = value(a);
  for (std::size_t c : cols) {
    if (c >= x.cols()) throw ShapeError("select_cols: column out of range");
  }
  Matrix out(x.rows(), cols.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(i, cols[j]);
  }
  std::vector<std::size_t> picked(cols.begin(), cols.end());
  return unary(a, std::move(out),
               [a, picked](Tape& t, const Matrix& g) {
                 Matrix& ga = t.grad_ref(a);
                 for (std::size_t i = 0; i < g.rows(); ++i) {
                   for (std::size_t j = 0; j < picked.size(); ++j) ga(i, picked[j]) += g(i, j);
                 }
               },
               "select_cols");
}

Var Tape::stack_tokens(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack_tokens: no inputs");
  const std::size_t batch = value(parts[0]).rows();
  const std::size_t dim = value(parts[0]).cols();
  const std::size_t tokens = parts.size();
  for (Var p : parts) {
    if (value(p).rows() != batch || value(p).cols() != dim) {
      throw ShapeError("stack_tokens: all tokens must share shape " +
                       value(parts[0]).shape_string());
    }
  }
  Matrix out(batch * tokens, dim);
  for (std::size_t t = 0; t < tokens; ++t) {
    const Matrix& src = value(parts[t]);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(src.row(b).begin(), src.row(b).end(), out.row(b * tokens + t).begin());
    }
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), parts,
              [ids, batch, tokens](Tape& t, const Matrix& g) {
                for (std::size_t tok = 0; tok < tokens; ++tok) {
                  if (!t.requires_grad(ids[tok])) continue;
                  Matrix& gp = t.grad_ref(ids[tok]);
                  for (std::size_t b = 0; b < batch; ++b) {
                    auto src = g.row(b * tokens + tok);
                    auto dst = gp.row(b);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                  }
                }
              },
              "stack_tokens");
}

Var Tape::embedding(Var table, std::span<const int> indices) {
  const Matrix& w = value(table);
  Matrix out(indices.size(), w.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= w.rows()) {
      throw ShapeError("embedding: index " + std::to_string(idx) + " outside vocabulary of " +
                       std::to_string(w.rows()));
    }
    std::copy(w.row(idx).begin(), w.row(idx).end(), out.row(i).begin());
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return unary(table, std::move(out),
               [table, idx](Tape& t, const Matrix& g) {
                 Matrix& gw = t.grad_ref(table);
                 for (std::size_t i = 0; i < idx.size(); ++i) {
                   auto src = g.row(i);
                   auto dst = gw.row(static_cast<std::size_t>(idx[i]));
                   for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                 }
               },
               "embedding");
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& in = value(x);
  const Matrix& gm = value(gamma);
  const Matrix& bt = value(beta);
  const std::size_t n = in.rows(), d = in.cols();
  if (gm.rows() != 1 || gm.cols() != d || bt.rows() != 1 || bt.cols() != d) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(d));
  }
  Matrix normed(n, d);
  std::vector<double> inv_std(n);
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = in.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      normed(i, j) = (r[j] - mu) * inv_std[i];
      out(i, j) = gm[j] * normed(i, j) + bt[j];
    }
  }
  const Var parents[] = {x, gamma, beta};
  return push(std::move(out), parents,
              [x, gamma, beta, normed = std::move(normed), inv_std = std::move(inv_std)](
                  Tape& t, const Matrix& g) {
                const std::size_t rows = g.rows(), cols = g.cols();
                const Matrix& gm = t.value(gamma);
                if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                  Matrix dg(1, cols), db(1, cols);
                  for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                      dg[j] += g(i, j) * normed(i, j);
                      db[j] += g(i, j);
                    }
                  }
                  if (t.requires_grad(gamma)) t.grad_ref(gamma) += dg;
                  if (t.requires_grad(beta)) t.grad_ref(beta) += db;
                }
                if (t.requires_grad(x)) {
                  Matrix& gx = t.grad_ref(x);
                  std::vector<double> dn(cols);
                  for (std::size_t i = 0; i < rows; ++i) {
                    double mean_dn = 0.0, mean_dn_n = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                      dn[j] = g(i, j) * gm[j];
                      mean_dn += dn[j];
                      mean_dn_n += dn[j] * normed(i, j);
                    }
                    mean_dn /= static_cast<double>(cols);
                    mean_dn_n /= static_cast<double>(cols);
                    for (std::size_t j = 0; j < cols; ++j) {
                      gx(i, j) += inv_std[i] * (dn[j] - mean_dn - normed(i, j) * mean_dn_n);
                    }
                  }
                }
              },
              "layer_norm");
}

Var Tape::attention(Var q, Var k, Var v, std::size_t tokens, std::size_t heads,
                    Matrix* probs_out) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  require_same_shape(Q, K, "attention(q,k)");
  require_same_shape(Q, V, "attention(q,v)");
  const std::size_t rows = Q.rows(), dim = Q.cols();
  if (tokens == 0 || rows % tokens != 0) {
    throw ShapeError("attention: " + std::to_string(rows) + " rows not divisible into groups of " +
                     std::to_string(tokens) + " tokens");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t batch = rows / tokens, hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix probs(batch * heads * tokens, tokens);
  Matrix out(rows, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * tokens;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      for (std::size_t i = 0; i < tokens; ++i) {
        auto p = probs.row((b * heads + h) * tokens + i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < tokens; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += Q(base + i, c0 + c) * K(base + j, c0 + c);
          p[j] = s * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < tokens; ++j) p[j] /= z;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double w = p[j];
          for (std::size_t c = 0; c < hd; ++c) out(base + i, c0 + c) += w * V(base + j, c0 + c);
        }
      }
    }
  }
  if (probs_out != nullptr) *probs_out = probs;
  const Var parents[] = {q, k, v};
  return push(
      std::move(out), parents,
      [q, k, v, tokens, heads, batch, hd, inv_sqrt, probs = std::move(probs)](Tape& t,
                                                                             const Matrix& g) {
        const Matrix& Q = t.value(q);
        const Matrix& K = t.value(k);
        const Matrix& V = t.value(v);
        const std::size_t dim = Q.cols();
        Matrix dQ(Q.rows(), dim), dK(K.rows(), dim), dV(V.rows(), dim);
        std::vector<double> dp(tokens);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * tokens;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * hd;
            for (std::size_t i = 0; i < tokens; ++i) {
              auto p = probs.row((b * heads + h) * tokens + i);
              double dot = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                  s += g(base + i, c0 + c) * V(base + j, c0 + c);
                  dV(base + j, c0 + c) += p[j] * g(base + i, c0 + c);
                }
                dp[j] = s;
                dot += s * p[j];
              }
              for (std::size_t j = 0; j < tokens; ++j) {
                const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                for (std::size_t c = 0; c < hd; ++c) {
                  dQ(base + i, c0 + c) += ds * K(base + j, c0 + c);
                  dK(base + j, c0 + c) += ds * Q(base + i, c0 + c);
                }
              }
            }
          }
        }
        if (t.requires_grad(q)) t.grad_ref(q) += dQ;
        if (t.requires_grad(k)) t.grad_ref(k) += dK;
        if (t.requires_grad(v)) t.grad_ref(v) += dV;
      },
      "attention");
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return unary(a, Matrix(1, 1, s),
               [a](Tape& t, const Matrix& g) {
                 Matrix& ga = t.grad_ref(a);
                 for (double& v : ga.data()) v += g[0];
               },
               "sum");
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  return scale(sum(a), 1.0 / n);
}

Var Tape::cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = value(logits);
  if (labels.size() != z.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(z.rows()) + " rows");
  }
  const std::size_t n = z.rows(), c = z.cols();
  Matrix soft(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range");
    }
    auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      soft(i, j) = std::exp(r[j] - mx);
      s += soft(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) soft(i, j) /= s;
    loss += -(r[y] - mx - std::log(s));
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return unary(logits, Matrix(1, 1, loss),
               [logits, ys, soft = std::move(soft)](Tape& t, const Matrix& g) {
                 Matrix& gz = t.grad_ref(logits);
                 const double w = g[0] / static_cast<double>(ys.size());
                 for (std::size_t i = 0; i < soft.rows(); ++i) {
                   for (std::size_t j = 0; j < soft.cols(); ++j) {
                     const double target = static_cast<int>(j) == ys[i] ? 1.0 : 0.0;
                     gz(i, j) += w * (soft(i, j) - target);
                   }
                 }
               },
               "cross_entropy");
}

Var Tape::mse(Var pred, std::span<const double> targets) {
  const Matrix& p = value(pred);
  if (p.cols() != 1 || p.rows() != targets.size()) {
    throw ShapeError("mse: predictions " + p.shape_string() + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double e = p[i] - targets[i];
    loss += e * e;
  }
  loss /= static_cast<double>(targets.size());
  std::vector<double> ys(targets.begin(), targets.end());
  return unary(pred, Matrix(1, 1, loss),
               [pred, ys](Tape& t, const Matrix& g) {
                 Matrix& gp = t.grad_ref(pred);
                 const Matrix& p = t.value(pred);
                 const double w = 2.0 * g[0] / static_cast<double>(ys.size());
                 for (std::size_t i = 0; i < ys.size(); ++i) gp[i] += w * (p[i] - ys[i]);
               },
               "mse");
}

}  // namespace irkit::num
