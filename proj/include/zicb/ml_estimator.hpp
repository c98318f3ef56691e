#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"
#include "zicb/link_functions.hpp"
#include "zicb/quadrature.hpp"

namespace zicb {

enum class BoundaryFlag { None, PAtOne, SigmaAtZero, PAtZero };

const char* boundary_flag_name(BoundaryFlag flag);

// Identity of a fit, used to reject likelihood-ratio comparisons between
// fits of different data or settings.
struct FitMeta {
  int n_subjects = 0;
  long n_obs = 0;
  int n_covariates = 0;
  LinkKind link = LinkKind::Probit;
  int quad_points = 0;
  bool p_fixed = false;

  bool same_problem(const FitMeta& other) const {
    return n_subjects == other.n_subjects && n_obs == other.n_obs &&
           n_covariates == other.n_covariates && link == other.link &&
           quad_points == other.quad_points;
  }
};

struct MlFit {
  ParameterSet params;  // coeffs = gamma (conditional scale)
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  BoundaryFlag boundary_flag = BoundaryFlag::None;

  // Inverse observed information over the free unconstrained coordinates
  // [logit(p), log(sigma_b), coeffs...] (pinned coordinates dropped).
  std::optional<Eigen::MatrixXd> vcov_unconstrained;

  // Rows/columns ordered (p, sigma_b, coeffs...); pinned parameters keep a
  // zero row/column.  Absent when the observed information is singular.
  std::optional<Eigen::MatrixXd> vcov_natural;

  // Population-averaged coefficients beta = gamma/sqrt(1+sigma_b^2) with a
  // delta-method covariance (probit link only).
  std::optional<Eigen::VectorXd> marginal_beta;
  std::optional<Eigen::MatrixXd> marginal_vcov;

  std::vector<double> loglik_trace;  // accepted optimizer iterates
  FitMeta meta;
};

struct MlOptions {
  int max_iterations = 500;
  double grad_tol = 1e-6;
  bool with_vcov = true;
};

class MlNonConvergence : public Error {
 public:
  MlNonConvergence(const std::string& what, MlFit last)
      : Error(ErrorCode::NonConvergence, what), last_iterate(std::move(last)) {}
  MlFit last_iterate;
};

// log of  I(y==0)*(1-p) + p * E_b[ prod_j pi_j(b)^y_j (1-pi_j(b))^(1-y_j) ]
// with pi_j(b) = link_cdf(x_j'gamma + b), b ~ N(0, sigma_b^2) integrated by
// the quadrature rule.  Inner products run in log space per node and are
// combined by log-sum-exp.
double subject_loglik(const SubjectRecord& subject, const ParameterSet& params,
                      LinkKind link, const QuadratureRule& rule);

// Sum of subject log-likelihoods (compensated summation).
double total_loglik(const ClusteredDataset& data, const ParameterSet& params,
                    LinkKind link, const QuadratureRule& rule);

// Heuristic starting values: p from the excess of all-zero subjects over the
// all-zero rate implied by an independence fit, coefficients from a pooled
// single-outcome regression scaled by sqrt(1+sigma0^2), sigma0 = 0.5.
ParameterSet auto_init(const ClusteredDataset& data, LinkKind link);

// Pooled one-outcome GLM ignoring clustering (Fisher scoring); used for
// starting values only.
Eigen::VectorXd pooled_glm(const ClusteredDataset& data, LinkKind link);

MlFit fit_ml(const ClusteredDataset& data, LinkKind link,
             const QuadratureRule& rule,
             const std::optional<ParameterSet>& init = {},
             const MlOptions& options = {});

// Same machinery with p pinned at 1 (no zero inflation).
MlFit fit_glmm(const ClusteredDataset& data, LinkKind link,
               const QuadratureRule& rule,
               const std::optional<ParameterSet>& init = {},
               const MlOptions& options = {});

// Negative Hessian of total_loglik at params_hat, by central finite
// differences of the analytic gradient in the unconstrained space
// [logit(p), log(sigma_b), coeffs...], symmetrized as (H+H^T)/2.
Eigen::MatrixXd observed_information(const ClusteredDataset& data,
                                     const ParameterSet& params_hat,
                                     LinkKind link, const QuadratureRule& rule);

struct Marginalized {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
};

// beta = gamma / sqrt(1+sigma_b^2); vcov_gamma_sigma is ordered
// (coeffs..., sigma_b) and maps through the Jacobian
// [ I/sqrt(1+s^2) | -gamma*s/(1+s^2)^{3/2} ].
Marginalized marginalize(const Eigen::VectorXd& gamma, double sigma_b,
                         const Eigen::MatrixXd& vcov_gamma_sigma);

// Analytic gradient of total_loglik in the unconstrained space; exposed for
// verification against finite differences.
Eigen::VectorXd total_loglik_gradient(const ClusteredDataset& data,
                                      const ParameterSet& params,
                                      LinkKind link,
                                      const QuadratureRule& rule);

}  // namespace zicb
