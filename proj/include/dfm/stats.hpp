#pragma once

#include <cstdint>
#include <vector>

namespace dfm {

// Regularized incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x),
// accurate to roughly 1e-14 over the ranges used here.
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Upper tail probability of a chi-square variate with `dof` degrees of
// freedom evaluated at `stat`.
double chi_square_pvalue(double stat, double dof);

struct ChiSquareResult {
  double stat = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  std::size_t pooled_cells = 0;  // cells merged for low expected counts
};

// Pearson goodness-of-fit test of observed counts against expected cell
// probabilities. Cells with expected count below `min_expected` are pooled
// into a single bucket before computing the statistic.
ChiSquareResult chi_square_gof(const std::vector<std::uint64_t>& counts,
                               const std::vector<double>& expected_probs,
                               double min_expected = 5.0);

}  // namespace dfm
