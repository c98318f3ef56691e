#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace zicb {

// One cluster: a subject's binary responses and the matching design rows.
struct SubjectRecord {
  std::string id;
  Eigen::VectorXd y;   // entries are 0.0 or 1.0
  Eigen::MatrixXd x;   // y.size() rows, one column per covariate

  bool all_zero() const { return y.size() > 0 && y.maxCoeff() == 0.0; }
};

struct ClusteredDataset {
  std::vector<SubjectRecord> subjects;
  std::vector<std::string> column_names;
  bool has_intercept = false;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_covariates() const { return static_cast<int>(column_names.size()); }
  long n_obs() const {
    long n = 0;
    for (const auto& s : subjects) n += s.y.size();
    return n;
  }
};

// Natural-scale parameters.  `coeffs` holds gamma (conditional scale, ML) or
// beta (marginal scale, GEE).  p is Pr(Z=1), the susceptible-class
// probability; the structural-zero fraction is 1-p.
struct ParameterSet {
  Eigen::VectorXd coeffs;
  double p = 1.0;
  std::optional<double> sigma_b;
  std::optional<double> alpha;             // exchangeable correlation
  std::optional<Eigen::MatrixXd> alpha_un; // unstructured correlation
};

enum class ParamMode { Ml, Gee };

// Checks invariants and returns the dataset unchanged (idempotent).
const ClusteredDataset& validate_dataset(const ClusteredDataset& data);

// Unconstrained coordinates used by the optimizers:
//   Ml:  [logit(p), log(sigma_b), coeffs...]
//   Gee: [logit(p), coeffs...]
Eigen::VectorXd pack_params(const ParameterSet& params, ParamMode mode);
ParameterSet unpack_params(const Eigen::VectorXd& theta, ParamMode mode);

double logit(double p);
double inverse_logit(double x);

}  // namespace zicb
