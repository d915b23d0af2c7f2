#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "irkit/dataset.hpp"
#include "irkit/numcore/matrix.hpp"
#include "irkit/numcore/rng.hpp"
#include "irkit/numcore/tape.hpp"

namespace irkit::nets {

// ---------------------------------------------------------------------------
// B-splines. `order` follows the de Boor convention: order 1 is piecewise
// constant, order k has polynomial degree k - 1.

// All knots.size() - order basis values at x. The basis is defined on the
// half-open cells [t_j, t_j+1); x equal to the last knot of the valid range
// [t_(order-1), t_(m-order)] is assigned to the cell on its left.
std::vector<double> bspline_basis(double x, std::span<const double> knots, std::size_t order);

// Basis values of the polynomial pieces active on `cell`, evaluated at x (x
// need not lie in the cell). Used for linear extrapolation.
std::vector<double> bspline_piece(double x, std::span<const double> knots, std::size_t order,
                                  std::size_t cell);
std::vector<double> bspline_piece_derivative(double x, std::span<const double> knots,
                                             std::size_t order, std::size_t cell);

// Uniform grid of `size` cells on [lo, hi] padded with order-1 knots per side.
struct SplineGrid {
  double lo = -3.0;
  double hi = 3.0;
  std::size_t size = 8;
  std::size_t order = 3;

  std::vector<double> knots() const;
  std::size_t basis_count() const { return size + order - 1; }
};

// Effective basis of a grid at x: inside [lo, hi] the B-spline basis, outside
// the boundary value plus slope times distance. `slope` (optional) receives
// d(basis)/dx.
void spline_features(const SplineGrid& grid, std::span<const double> knots, double x,
                     std::span<double> basis, std::span<double> slope);

// ---------------------------------------------------------------------------
// KAN layer: out_o = sum_i [ base(i,o) * silu(x_i) + scale(i,o) * sum_j coef(i*nb+j, o) * B_j(x_i) ]

num::Var kan_layer(num::Tape& tape, num::Var x, num::Var base, num::Var scale, num::Var coef,
                   const SplineGrid& grid);

// ---------------------------------------------------------------------------
// Pre-norm transformer block on (B*tokens) x dim rows:
//   x + O(attn(LN1 x)),  then  x + FF2(gelu(FF1(LN2 x)))
// Keys carry no bias: it would shift every score in a row equally.

struct BlockVars {
  num::Var ln1_g, ln1_b, q_w, q_b, k_w, v_w, v_b, o_w, o_b;
  num::Var ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
};

// `drop` (optional) is applied to the feed-forward activation.
num::Var transformer_block(num::Tape& tape, num::Var x, std::size_t tokens, std::size_t heads,
                           const BlockVars& p, num::Matrix* probs = nullptr,
                           const std::function<num::Var(num::Var)>& drop = {});

// ---------------------------------------------------------------------------
// Model zoo.

enum class Arch { Mlp, TabTransformer, TabKanet };
std::string_view to_string(Arch a);
Arch parse_arch(std::string_view text);

struct NetConfig {
  Arch arch = Arch::TabKanet;
  bool classification = true;  // 2 logits, else one scalar
  std::size_t dim = 64;        // token / embedding width
  std::size_t heads = 8;
  std::size_t layers = 3;
  std::size_t ffn_mult = 4;
  std::size_t hidden = 64;         // MLP and head hidden width
  std::size_t mlp_embed_dim = 8;   // MLP categorical embedding width
  SplineGrid grid{};
  double dropout = 0.0;  // training only
  std::uint64_t seed = 0;
};

// Active features as the network sees them.
struct FeatureLayout {
  std::size_t numeric = 0;
  std::vector<std::size_t> vocab;  // one entry per categorical feature

  static FeatureLayout from(const FeatureEncoder& encoder, const FeatureMask& mask);
  bool operator==(const FeatureLayout&) const = default;
};

// A batch: z-scored numerics (B x numeric), categorical codes row-major
// (B x vocab.size()).
struct NetBatch {
  num::Matrix numeric;
  std::vector<int> categorical;

  std::size_t rows() const { return numeric.rows(); }
};

NetBatch make_batch(std::span<const FeatureVector> rows, const FeatureMask& mask);
NetBatch slice(const NetBatch& b, std::span<const std::size_t> rows, std::size_t n_categorical);

// Captured intermediate values for tests and inspection.
struct ForwardTrace {
  std::vector<num::Matrix> attention;  // per block, (B*heads*T) x T
  std::size_t tokens = 0;
};

class NetModel {
 public:
  NetModel() = default;
  NetModel(const NetModel&) = delete;
  NetModel& operator=(const NetModel&) = delete;
  NetModel(NetModel&&) = default;
  NetModel& operator=(NetModel&&) = default;

  static NetModel build(const NetConfig& config, const FeatureLayout& layout);

  // Records the forward pass. `bound`, if non-empty, supplies one Var per
  // parameter (in params() order) instead of binding the stored values.
  // `dropout_rng` enables training-mode dropout.
  num::Var forward(num::Tape& tape, const NetBatch& batch, std::span<const num::Var> bound = {},
                   ForwardTrace* trace = nullptr, num::Rng* dropout_rng = nullptr) const;

  // Cross-entropy (classification) or MSE (regression) on the batch.
  num::Var loss(num::Tape& tape, const NetBatch& batch, std::span<const double> targets,
                std::span<const num::Var> bound = {}, num::Rng* dropout_rng = nullptr) const;

  // Eval-mode outputs: B x 2 logits or B x 1 values.
  num::Matrix predict(const NetBatch& batch, ForwardTrace* trace = nullptr) const;
  // P(class 1) or the regression value, one per row.
  std::vector<double> predict_scores(const NetBatch& batch) const;

  std::vector<num::Parameter>& params() { return params_; }
  const std::vector<num::Parameter>& params() const { return params_; }
  num::Parameter& param(std::string_view name);
  const num::Parameter& param(std::string_view name) const;
  std::size_t parameter_count() const;
  // Number of tokens entering the transformer (0 for Mlp).
  std::size_t token_count() const;
  void fill_parameters(double value);  // test hook
  void set_frozen(std::string_view prefix, bool frozen);

  const NetConfig& config() const { return config_; }
  const FeatureLayout& layout() const { return layout_; }

  // Versioned blob: magic, JSON header (config, layout, shapes), raw doubles.
  std::string serialize() const;
  static NetModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static NetModel load(const std::filesystem::path& path);

 private:
  struct Scope;

  void add(std::string name, num::Matrix value);
  std::size_t index(std::string_view name) const;

  NetConfig config_;
  FeatureLayout layout_;
  std::vector<num::Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<double> knots_;
};

// Raises ConfigError for invalid configurations (e.g. heads not dividing dim).
void validate(const NetConfig& config, const FeatureLayout& layout);

}  // namespace irkit::nets
