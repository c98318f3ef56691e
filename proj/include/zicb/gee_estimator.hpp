#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"
#include "zicb/link_functions.hpp"
#include "zicb/ml_estimator.hpp"

namespace zicb {

// Working-correlation families for the marginal-mean estimating equations.
//   MI: independence
//   CI: the correlation induced purely by the shared latent class
//   ME: exchangeable on the marginal scale
//   CE: exchangeable among susceptibles plus the latent-class part
//   UN: unstructured (constant cluster size)
enum class CorrelationKind { MI, CI, ME, CE, UN };

const char* correlation_kind_name(CorrelationKind kind);

struct GeeFit {
  ParameterSet params;  // coeffs = beta (marginal scale); alpha fields per kind
  bool converged = false;
  int iterations = 0;
  BoundaryFlag boundary_flag = BoundaryFlag::None;
  double ef_norm = 0.0;  // estimating-function max-norm at the solution
  // Sandwich covariance ordered (p, beta...); absent when the bread matrix
  // is singular.
  std::optional<Eigen::MatrixXd> vcov;
  CorrelationKind kind = CorrelationKind::MI;
  FitMeta meta;
};

struct GeeOptions {
  int max_iterations = 200;
  double param_tol = 1e-8;
  double ef_tol = 1e-6;
  int max_halvings = 20;
  bool with_vcov = true;
  std::optional<double> fixed_alpha;  // pin the scalar alpha (diagnostics)
};

class GeeNonConvergence : public Error {
 public:
  GeeNonConvergence(const std::string& what, GeeFit last)
      : Error(ErrorCode::NonConvergence, what), last_iterate(std::move(last)) {}
  GeeFit last_iterate;
};

// mu^M = p * Phi(x'beta)
double marginal_mean(const Eigen::VectorXd& x_row, const Eigen::VectorXd& beta,
                     double p);

// d mu^M / d (p, beta): [Phi(x'beta), p*phi(x'beta)*x...]
Eigen::VectorXd mean_jacobian(const Eigen::VectorXd& x_row,
                              const Eigen::VectorXd& beta, double p);

// cov(Y_j, Y_k) = cond_cov*p + mu_zj*mu_zk*p*(1-p)  (law of total covariance
// across the susceptible/structural-zero mixture)
double unconditional_cov(double mu_zj, double mu_zk, double p,
                         double cond_cov);

// Correlation matrix R (unit diagonal) for one cluster given the conditional
// means mu_z = Phi(x'beta).  alpha is the scalar exchangeable parameter
// (ME/CE); alpha_un the unstructured matrix (UN).  Throws
// NonPDWorkingCorrelation when the smallest eigenvalue is below 1e-10.
Eigen::MatrixXd working_correlation(CorrelationKind kind,
                                    const Eigen::VectorXd& mu_z, double p,
                                    double alpha = 0.0,
                                    const Eigen::MatrixXd* alpha_un = nullptr);

struct AlphaEstimate {
  double value = 0.0;        // ME/CE
  Eigen::MatrixXd matrix;    // UN
};

// Moment estimators from Pearson residuals of the marginal mean; estimates
// are clamped to [-0.99, 0.99].
AlphaEstimate estimate_alpha(CorrelationKind kind, const ClusteredDataset& data,
                             const std::vector<Eigen::VectorXd>& mu_z,
                             double p);

GeeFit fit_gee(const ClusteredDataset& data, CorrelationKind kind,
               const std::optional<ParameterSet>& init = {},
               const GeeOptions& options = {});

// A^{-1} B A^{-1} with A = sum D'V^{-1}D and
// B = sum D'V^{-1}(y-mu)(y-mu)'V^{-1}D, over (p, beta).
Eigen::MatrixXd sandwich_vcov(const ClusteredDataset& data, const GeeFit& fit);

namespace detail {
// Sandwich at arbitrary parameters; estimate_p=false drops the p column of D
// (covariance over beta alone).
Eigen::MatrixXd sandwich_at(const ClusteredDataset& data, CorrelationKind kind,
                            const ParameterSet& params, bool estimate_p);
}  // namespace detail

}  // namespace zicb
