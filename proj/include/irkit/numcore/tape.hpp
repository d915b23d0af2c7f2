#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irkit/numcore/matrix.hpp"

namespace irkit::num {

// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// walking them backwards visits every node after all of its consumers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input; no gradient flows to it.
  Var constant(Matrix value);
  // Leaf whose gradient is kept on the tape (used by fd_check).
  Var input(Matrix value);
  // Leaf bound to a Parameter; backward() adds into param.grad unless frozen.
  Var param(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Label used in numeric-fault messages for subsequently recorded nodes.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  // Records a node computed outside the tape. `backward` receives the node's
  // output gradient and must accumulate into parents via grad_ref().
  Var push(Matrix value, std::span<const Var> parents, BackwardFn backward, std::string_view op);
  Matrix& grad_ref(Var v);

  // Seeds d(output)/d(output) = 1 and propagates. Output must be 1x1.
  void backward(Var output);

  // Elementwise / linear algebra.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_row(Var a, Var row);  // row (1 x cols) broadcast over rows of a
  Var relu(Var a);
  Var silu(Var a);
  Var gelu(Var a);  // tanh approximation
  Var tanh(Var a);

  // Shape plumbing.
  Var reshape(Var a, std::size_t rows, std::size_t cols);
  Var concat_cols(std::span<const Var> parts);
  Var select_cols(Var a, std::span<const std::size_t> cols);
  // parts[t] is (B x d); result is (B*T x d) with row b*T + t = parts[t] row b.
  Var stack_tokens(std::span<const Var> parts);

  // Rows of `table` selected by index; gradient scatters back into the table.
  Var embedding(Var table, std::span<const int> indices);

  // Rowwise layer normalisation with affine gamma/beta (each 1 x cols).
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Scaled dot-product attention over groups of `tokens` consecutive rows
  // (one group per sample) with `heads` heads splitting the column dimension.
  // If `probs_out` is non-null it receives the attention weights laid out as
  // (B*heads*tokens) x tokens.
  Var attention(Var q, Var k, Var v, std::size_t tokens, std::size_t heads,
                Matrix* probs_out = nullptr);

  // Scalar reductions (1 x 1 results).
  Var sum(Var a);
  Var mean(Var a);
  // Mean softmax cross-entropy of logits (B x C) against class labels.
  Var cross_entropy(Var logits, std::span<const int> labels);
  // Mean squared error of predictions (B x 1) against targets.
  Var mse(Var pred, std::span<const double> targets);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* bound = nullptr;
    bool requires_grad = false;
  };

  Var unary(Var a, Matrix value, BackwardFn backward, std::string_view op);

  std::vector<Node> nodes_;
  std::string scope_;
};

}  // namespace irkit::num
