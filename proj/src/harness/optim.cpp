#include "irkit/harness/optim.hpp"

#include <cmath>

#include "irkit/errors.hpp"

namespace irkit::harness {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::AdamW ? "adamw" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adamw") return OptimizerKind::AdamW;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected adamw or sgd)");
}

void Optimizer::step(std::vector<num::Parameter>& params) {
  ++t_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (auto& p : params) {
      if (p.frozen) continue;
      auto w = p.value.data();
      auto g = p.grad.data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.lr * g[i];
    }
    return;
  }
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.frozen) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - config_.lr * config_.weight_decay;
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace irkit::harness
