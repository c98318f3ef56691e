#include "zicb/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "zicb/link_functions.hpp"

namespace zicb {

namespace {

constexpr int kGammaMaxIter = 500;
constexpr double kGammaEps = 1e-15;

// Lower regularized incomplete gamma P(a,x) by power series; valid x < a+1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kGammaMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kGammaEps)
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw std::runtime_error("incomplete gamma series did not converge");
}

// Upper regularized incomplete gamma Q(a,x) by modified Lentz continued
// fraction; valid x >= a+1.
double gamma_q_cf(double a, double x) {
  const double tiny = std::numeric_limits<double>::min() / kGammaEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kGammaMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kGammaEps)
      return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw std::runtime_error(
      "incomplete gamma continued fraction did not converge");
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0)
    throw std::invalid_argument("gamma_q requires a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

}  // namespace

double chi_squared_survival(double x, double df) {
  if (!(df > 0.0))
    throw std::invalid_argument("chi_squared_survival requires df > 0");
  if (!(x > 0.0)) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

LrtResult lrt_zero_inflation(const MlFit& fit_mixture, const MlFit& fit_null) {
  if (fit_mixture.meta.p_fixed)
    fail(ErrorCode::MismatchedFits,
         "alternative fit has p fixed; it must estimate the mixture weight");
  if (!fit_null.meta.p_fixed)
    fail(ErrorCode::MismatchedFits,
         "null fit estimates p; it must be the susceptible-only model");
  if (!fit_mixture.meta.same_problem(fit_null.meta))
    fail(ErrorCode::MismatchedFits,
         "fits come from different datasets or model settings");
  if (!fit_mixture.converged || !fit_null.converged)
    fail(ErrorCode::MismatchedFits,
         "both fits must have converged before comparison");

  LrtResult out;
  out.loglik_alt = fit_mixture.loglik;
  out.loglik_null = fit_null.loglik;
  double lambda = 2.0 * (out.loglik_alt - out.loglik_null);
  if (lambda < -1e-6)
    fail(ErrorCode::NegativeLambda,
         "alternative log-likelihood " + std::to_string(out.loglik_alt) +
             " is below the null " + std::to_string(out.loglik_null) +
             " beyond rounding tolerance");
  lambda = std::max(lambda, 0.0);
  out.lambda = lambda;
  // Boundary mixture: 1/2 point mass at 0 + 1/2 chi^2_1.
  out.p_value = lambda > 0.0 ? 0.5 * chi_squared_survival(lambda, 1.0) : 1.0;
  return out;
}

std::pair<double, double> wald_ci(double estimate, double se, double level) {
  if (!(level > 0.0 && level < 1.0))
    fail(ErrorCode::InvalidLevel,
         "confidence level " + std::to_string(level) +
             " is outside (0,1)");
  if (!(se >= 0.0) || !std::isfinite(se))
    throw std::invalid_argument("wald_ci requires a finite nonnegative se");
  const double z = normal_quantile(0.5 * (1.0 + level));
  return {estimate - z * se, estimate + z * se};
}

IdentifiabilityReport identifiability_check(const ClusteredDataset& data) {
  validate_dataset(data);
  IdentifiabilityReport report;
  const int k = data.n_covariates();
  const int first = data.has_intercept ? 1 : 0;

  for (int c = first; c < k; ++c) {
    std::set<double> values;
    for (const auto& s : data.subjects)
      for (Eigen::Index j = 0; j < s.x.rows(); ++j) values.insert(s.x(j, c));
    if (values.size() >= 20) {
      report.has_continuous = true;
      report.messages.push_back(
          "covariate '" + data.column_names[c] + "' takes " +
          std::to_string(values.size()) +
          " distinct values; treated as continuous");
    }
  }

  std::set<std::vector<double>> patterns;
  for (const auto& s : data.subjects) {
    for (Eigen::Index j = 0; j < s.x.rows(); ++j) {
      std::vector<double> row;
      row.reserve(k - first);
      for (int c = first; c < k; ++c) row.push_back(s.x(j, c));
      patterns.insert(std::move(row));
    }
  }
  report.n_distinct_patterns = static_cast<long>(patterns.size());

  if (report.has_continuous) {
    report.identified = true;
  } else if (report.n_distinct_patterns >= 7) {
    report.identified = true;
    report.messages.push_back(
        std::to_string(report.n_distinct_patterns) +
        " distinct covariate patterns; mixture weight is estimable");
  } else {
    report.identified = false;
    report.messages.push_back(
        "only " + std::to_string(report.n_distinct_patterns) +
        " distinct covariate patterns (fewer than 7); the mixture weight "
        "may be weakly identified");
  }
  return report;
}

}  // namespace zicb
