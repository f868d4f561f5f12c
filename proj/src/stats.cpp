#include "dfm/stats.hpp"

#include <cmath>
#include <string>

#include "dfm/errors.hpp"

namespace dfm {
namespace {

constexpr int kMaxIterations = 800;
constexpr double kEps = 1e-16;

// Series expansion of P(a, x); converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < kMaxIterations; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Modified Lentz continued fraction for Q(a, x); converges for x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIterations; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0)
    throw contract_error("gamma_p: need a > 0 and x >= 0");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_continued_fraction(a, x);
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0)
    throw contract_error("gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_continued_fraction(a, x);
}

double chi_square_pvalue(double stat, double dof) {
  if (!(dof > 0.0)) throw contract_error("chi_square_pvalue: dof must be > 0");
  if (stat < 0.0) throw contract_error("chi_square_pvalue: negative statistic");
  return gamma_q(0.5 * dof, 0.5 * stat);
}

ChiSquareResult chi_square_gof(const std::vector<std::uint64_t>& counts,
                               const std::vector<double>& expected_probs,
                               double min_expected) {
  if (counts.size() != expected_probs.size())
    throw contract_error("chi_square_gof: size mismatch");
  if (counts.empty()) throw contract_error("chi_square_gof: no cells");

  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  if (n == 0) throw contract_error("chi_square_gof: no observations");

  double prob_total = 0.0;
  for (double p : expected_probs) {
    if (p < 0.0) throw contract_error("chi_square_gof: negative probability");
    prob_total += p;
  }
  if (std::fabs(prob_total - 1.0) > 1e-9)
    throw contract_error("chi_square_gof: expected probabilities total " +
                         std::to_string(prob_total));

  ChiSquareResult result;
  double pooled_observed = 0.0;
  double pooled_expected = 0.0;
  std::size_t kept = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double expected = expected_probs[k] * static_cast<double>(n);
    if (expected < min_expected) {
      pooled_observed += static_cast<double>(counts[k]);
      pooled_expected += expected;
      ++result.pooled_cells;
      continue;
    }
    const double diff = static_cast<double>(counts[k]) - expected;
    result.stat += diff * diff / expected;
    ++kept;
  }
  if (pooled_expected > 0.0) {
    const double diff = pooled_observed - pooled_expected;
    result.stat += diff * diff / pooled_expected;
    ++kept;
  }
  if (kept < 2)
    throw contract_error("chi_square_gof: fewer than two usable cells");
  result.dof = static_cast<double>(kept - 1);
  result.p_value = chi_square_pvalue(result.stat, result.dof);
  return result;
}

}  // namespace dfm
