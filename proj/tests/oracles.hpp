#pragma once

// Independent reference implementations used only by tests. Each is written
// along a different arithmetic route from the library code it checks.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace irkit::oracle {

// Insulin-resistance indices transcribed separately, via log10 and sums of logs.
inline double homa_ir(double fpg_mmol, double insulin) { return (insulin / 22.5) * fpg_mmol; }

inline double tyg(double tg, double fpg) {
  return (std::log10(tg) + std::log10(fpg) - std::log10(2.0)) / std::log10(std::exp(1.0));
}

inline double mets_ir(double fpg, double tg, double bmi, double hdl) {
  return bmi * (std::log10(fpg + fpg + tg) / std::log10(hdl));
}

// Brute-force AUC: fraction of (positive, negative) pairs ranked correctly,
// ties counted half.
inline double auc_pairs(std::span<const double> scores, std::span<const int> labels) {
  double credit = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        credit += 1.0;
      } else if (scores[i] == scores[j]) {
        credit += 0.5;
      }
    }
  }
  return credit / static_cast<double>(pairs);
}

// Same brute force in exact integer arithmetic: returns (2 * credit, pairs).
inline std::pair<long long, long long> auc_pairs_exact(std::span<const double> scores,
                                                       std::span<const int> labels) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        twice += 2;
      } else if (scores[i] == scores[j]) {
        twice += 1;
      }
    }
  }
  return {twice, pairs};
}

// Direct (non-recursive) evaluation of the uniform B-spline basis of a given
// order on integer-spaced knots via the truncated-power / cardinal formula.
// Cardinal B-spline of order k on knots 0..k:
//   M_k(t) = 1/(k-1)! * sum_{j=0}^{k} (-1)^j C(k,j) (t-j)_+^{k-1}
inline double cardinal_bspline(double t, int order) {
  if (t < 0.0 || t >= order) return 0.0;
  double fact = 1.0;
  for (int i = 2; i <= order - 1; ++i) fact *= i;
  double sum = 0.0;
  double binom = 1.0;
  for (int j = 0; j <= order; ++j) {
    const double base = t - j;
    if (base > 0.0) {
      sum += ((j % 2 == 0) ? 1.0 : -1.0) * binom * std::pow(base, order - 1);
    } else if (base == 0.0 && order == 1) {
      sum += ((j % 2 == 0) ? 1.0 : -1.0) * binom;
    }
    binom = binom * (order - j) / (j + 1);
  }
  return sum / fact;
}

}  // namespace irkit::oracle
