#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"

namespace zicb {

enum class EstimatorKind { Ml, Glmm, GeeMI, GeeCI, GeeME, GeeCE, GeeUN };

const char* estimator_kind_name(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string& name);

struct SimDesign {
  int n_subjects = 2000;
  int n_questions = 5;
  Eigen::VectorXd gamma;  // intercept, slope on x, question effects 2..J
  double sigma_b = 0.5;
  double p = 0.7;
  bool misspecified = false;
  std::uint64_t seed = 1;
  int replications = 200;
  int quad_points = 20;
  double ci_level = 0.95;
  std::vector<EstimatorKind> estimators;
};

const SimDesign& validate_design(const SimDesign& design);

// Susceptible-class indicator, one continuous covariate and question
// dummies; responses share a N(0, sigma_b^2) subject intercept.
ClusteredDataset generate_correct(const SimDesign& design, int rep);

// Same marginal means, but only the first three questions carry the random
// intercept; the rest are independent with the marginalized mean. Requires
// at least 4 questions.
ClusteredDataset generate_misspecified(const SimDesign& design, int rep);

ClusteredDataset generate_dataset(const SimDesign& design, int rep);

// True population-averaged coefficients gamma / sqrt(1 + sigma_b^2).
Eigen::VectorXd true_marginal_beta(const SimDesign& design);

struct RepOutcome {
  enum class Status { Ok, Boundary, Failed };
  Status status = Status::Failed;
  Eigen::VectorXd estimate;  // aligned with estimator_parameter_names
  Eigen::VectorXd se;
};

struct RepRecord {
  std::vector<RepOutcome> by_estimator;  // aligned with design.estimators
};

std::vector<std::string> estimator_parameter_names(EstimatorKind kind,
                                                   const SimDesign& design);
Eigen::VectorXd estimator_truth(EstimatorKind kind, const SimDesign& design);

RepRecord run_one_replication(const SimDesign& design, int rep);

struct ParamSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  bool has_sd = false;
  double mean_se = 0.0;
  double coverage = 0.0;
};

struct EstimatorSummary {
  EstimatorKind kind = EstimatorKind::Ml;
  int n_used = 0;
  int n_boundary = 0;
  int n_failed = 0;
  std::vector<ParamSummary> params;
};

struct SimulationReport {
  SimDesign design;
  std::vector<EstimatorSummary> estimators;
};

SimulationReport summarize(const SimDesign& design,
                           const std::vector<RepRecord>& records);

// Runs design.replications independent replications (replication index is
// the substream, so results do not depend on the thread count) and
// summarizes them.
SimulationReport run_replications(const SimDesign& design, int threads = 1);

}  // namespace zicb
