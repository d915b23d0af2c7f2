#include "irkit/numcore/fd_check.hpp"

#include <algorithm>
#include <cmath>

namespace irkit::num {
namespace {

double evaluate(const ScalarGraph& f, const std::vector<Matrix>& point) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Matrix& m : point) leaves.push_back(tape.constant(m));
  return tape.value(f(tape, leaves))[0];
}

}  // namespace

FdReport fd_check_report(const ScalarGraph& f, const std::vector<Matrix>& point, double eps) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Matrix& m : point) leaves.push_back(tape.input(m));
  const Var out = f(tape, leaves);
  tape.backward(out);

  FdReport report;
  std::vector<Matrix> probe = point;
  for (std::size_t in = 0; in < point.size(); ++in) {
    const Matrix& analytic = tape.grad(leaves[in]);
    for (std::size_t i = 0; i < point[in].size(); ++i) {
      const double original = probe[in][i];
      probe[in][i] = original + eps;
      const double up = evaluate(f, probe);
      probe[in][i] = original - eps;
      const double down = evaluate(f, probe);
      probe[in][i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report = {rel, in, i, a, numeric};
      }
    }
  }
  return report;
}

double fd_check(const ScalarGraph& f, const std::vector<Matrix>& point, double eps) {
  return fd_check_report(f, point, eps).max_rel_error;
}

}  // namespace irkit::num
