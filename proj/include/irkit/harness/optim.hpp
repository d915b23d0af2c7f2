#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "irkit/numcore/tape.hpp"

namespace irkit::harness {

enum class OptimizerKind { AdamW, Sgd };
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // AdamW only, decoupled
};

// Steps every non-frozen parameter using its accumulated grad. Frozen
// parameters are left untouched (no decay either).
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(std::vector<num::Parameter>& params);
  std::size_t steps() const { return t_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::size_t t_ = 0;
  std::vector<num::Matrix> m_, v_;
};

}  // namespace irkit::harness
