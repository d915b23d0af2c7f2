#pragma once

#include <functional>
#include <span>
#include <vector>

#include "irkit/numcore/tape.hpp"

namespace irkit::num {

// Builds a scalar output from the given leaves on a fresh tape.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() against central differences (f(x+eps e) - f(x-eps e)) / 2 eps
// over every coordinate of every input. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8).
FdReport fd_check_report(const ScalarGraph& f, const std::vector<Matrix>& point, double eps = 1e-6);

double fd_check(const ScalarGraph& f, const std::vector<Matrix>& point, double eps = 1e-6);

}  // namespace irkit::num
