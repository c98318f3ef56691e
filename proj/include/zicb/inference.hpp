#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"
#include "zicb/ml_estimator.hpp"

namespace zicb {

// Survival function P(chi^2_df > x) via the regularized upper incomplete
// gamma function.
double chi_squared_survival(double x, double df);

struct LrtResult {
  double lambda = 0.0;
  double p_value = 1.0;
  double loglik_alt = 0.0;
  double loglik_null = 0.0;
};

// Likelihood-ratio test of the susceptible-only model (p fixed at 1) against
// the mixture. The null puts p on the boundary, so the statistic is compared
// against an equal mixture of a point mass at zero and chi^2_1.
LrtResult lrt_zero_inflation(const MlFit& fit_mixture, const MlFit& fit_null);

std::pair<double, double> wald_ci(double estimate, double se, double level);

struct IdentifiabilityReport {
  bool identified = false;
  bool has_continuous = false;
  long n_distinct_patterns = 0;
  std::vector<std::string> messages;
};

// The mixture weight is only well separated from the response model when the
// covariate design is rich enough: a continuous covariate, or enough distinct
// covariate patterns.
IdentifiabilityReport identifiability_check(const ClusteredDataset& data);

}  // namespace zicb
