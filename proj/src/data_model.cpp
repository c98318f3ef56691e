#include "zicb/data_model.hpp"

#include <cmath>
#include <unordered_set>

#include "zicb/errors.hpp"

namespace zicb {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorCode::RaggedDesign: return "RaggedDesign";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::DuplicateSubjectId: return "DuplicateSubjectId";
    case ErrorCode::NonFiniteCovariate: return "NonFiniteCovariate";
    case ErrorCode::BoundaryParameter: return "BoundaryParameter";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::NonFiniteIntegrand: return "NonFiniteIntegrand";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::NonPDWorkingCorrelation: return "NonPDWorkingCorrelation";
    case ErrorCode::SingularBread: return "SingularBread";
    case ErrorCode::BoundarySolution: return "BoundarySolution";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NegativeLambda: return "NegativeLambda";
    case ErrorCode::MismatchedFits: return "MismatchedFits";
    case ErrorCode::InvalidLevel: return "InvalidLevel";
    case ErrorCode::InvalidDesign: return "InvalidDesign";
    case ErrorCode::EmptyReplicationSet: return "EmptyReplicationSet";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownEstimator: return "UnknownEstimator";
    case ErrorCode::UnsupportedLink: return "UnsupportedLink";
  }
  return "UnknownError";
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double inverse_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const ClusteredDataset& validate_dataset(const ClusteredDataset& data) {
  if (data.subjects.empty())
    fail(ErrorCode::EmptyCluster, "dataset has no subjects");
  const int k = data.n_covariates();
  if (k < 1)
    fail(ErrorCode::RaggedDesign, "dataset declares no covariate columns");

  std::unordered_set<std::string> seen;
  seen.reserve(data.subjects.size());
  for (const auto& s : data.subjects) {
    if (!seen.insert(s.id).second)
      fail(ErrorCode::DuplicateSubjectId, "subject id '" + s.id + "' repeats");
    if (s.y.size() == 0)
      fail(ErrorCode::EmptyCluster,
           "subject '" + s.id + "' has no observations");
    if (s.x.rows() != s.y.size() || s.x.cols() != k)
      fail(ErrorCode::RaggedDesign,
           "subject '" + s.id + "' has design shape " +
               std::to_string(s.x.rows()) + "x" + std::to_string(s.x.cols()) +
               ", expected " + std::to_string(s.y.size()) + "x" +
               std::to_string(k));
    for (Eigen::Index j = 0; j < s.y.size(); ++j) {
      const double yv = s.y[j];
      if (yv != 0.0 && yv != 1.0)
        fail(ErrorCode::NonBinaryOutcome,
             "subject '" + s.id + "' outcome " + std::to_string(j + 1) +
                 " is " + std::to_string(yv));
      for (int c = 0; c < k; ++c) {
        if (!std::isfinite(s.x(j, c)))
          fail(ErrorCode::NonFiniteCovariate,
               "subject '" + s.id + "' covariate '" + data.column_names[c] +
                   "' row " + std::to_string(j + 1) + " is not finite");
      }
      if (data.has_intercept && s.x(j, 0) != 1.0)
        fail(ErrorCode::RaggedDesign,
             "subject '" + s.id +
                 "' intercept column is not constant 1 at row " +
                 std::to_string(j + 1));
    }
  }
  return data;
}

Eigen::VectorXd pack_params(const ParameterSet& params, ParamMode mode) {
  if (!(params.p > 0.0 && params.p < 1.0))
    fail(ErrorCode::BoundaryParameter,
         "p=" + std::to_string(params.p) + " is not interior to (0,1)");
  const int k = static_cast<int>(params.coeffs.size());
  if (mode == ParamMode::Ml) {
    if (!params.sigma_b.has_value() || !(*params.sigma_b > 0.0))
      fail(ErrorCode::BoundaryParameter,
           "sigma_b must be positive to be packed");
    Eigen::VectorXd theta(2 + k);
    theta[0] = logit(params.p);
    theta[1] = std::log(*params.sigma_b);
    theta.tail(k) = params.coeffs;
    return theta;
  }
  Eigen::VectorXd theta(1 + k);
  theta[0] = logit(params.p);
  theta.tail(k) = params.coeffs;
  return theta;
}

ParameterSet unpack_params(const Eigen::VectorXd& theta, ParamMode mode) {
  ParameterSet params;
  const int lead = mode == ParamMode::Ml ? 2 : 1;
  if (theta.size() < lead)
    fail(ErrorCode::BoundaryParameter, "parameter vector too short");
  params.p = inverse_logit(theta[0]);
  if (mode == ParamMode::Ml) params.sigma_b = std::exp(theta[1]);
  params.coeffs = theta.tail(theta.size() - lead);
  return params;
}

}  // namespace zicb
