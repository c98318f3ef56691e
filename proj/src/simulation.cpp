#include "zicb/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "zicb/gee_estimator.hpp"
#include "zicb/inference.hpp"
#include "zicb/link_functions.hpp"
#include "zicb/ml_estimator.hpp"
#include "zicb/quadrature.hpp"
#include "zicb/rng.hpp"

namespace zicb {

namespace {

CorrelationKind gee_kind(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::GeeMI: return CorrelationKind::MI;
    case EstimatorKind::GeeCI: return CorrelationKind::CI;
    case EstimatorKind::GeeME: return CorrelationKind::ME;
    case EstimatorKind::GeeCE: return CorrelationKind::CE;
    case EstimatorKind::GeeUN: return CorrelationKind::UN;
    default:
      throw std::invalid_argument("not a marginal estimator");
  }
}

bool is_gee(EstimatorKind kind) {
  return kind != EstimatorKind::Ml && kind != EstimatorKind::Glmm;
}

ClusteredDataset generate_impl(const SimDesign& design, int rep,
                               bool misspecified) {
  validate_design(design);
  const int n = design.n_subjects;
  const int j_n = design.n_questions;
  const double denom = std::sqrt(1.0 + design.sigma_b * design.sigma_b);

  ClusteredDataset data;
  data.has_intercept = true;
  data.column_names.reserve(j_n + 1);
  data.column_names.push_back("(Intercept)");
  data.column_names.push_back("x");
  for (int j = 2; j <= j_n; ++j)
    data.column_names.push_back("q" + std::to_string(j));
  data.subjects.reserve(n);

  SplitMix64 rng = SplitMix64::for_stream(design.seed, rep);
  for (int i = 0; i < n; ++i) {
    // Fixed draw order per subject keeps the stream position independent of
    // the outcomes: covariate, intercept, class, then one uniform per
    // question.
    const double x = rng.next_normal();
    const double b = design.sigma_b * rng.next_normal();
    const bool susceptible = rng.next_bernoulli(design.p);
    SubjectRecord s;
    s.id = "s" + std::to_string(i + 1);
    s.y.resize(j_n);
    s.x.resize(j_n, j_n + 1);
    for (int j = 1; j <= j_n; ++j) {
      const double u = rng.next_uniform();
      double eta = design.gamma[0] + design.gamma[1] * x;
      if (j >= 2) eta += design.gamma[j];
      double prob;
      if (!misspecified || j <= 3)
        prob = normal_cdf(eta + b);
      else
        prob = normal_cdf(eta / denom);
      s.y[j - 1] = (susceptible && u < prob) ? 1.0 : 0.0;
      s.x(j - 1, 0) = 1.0;
      s.x(j - 1, 1) = x;
      for (int c = 2; c <= j_n; ++c) s.x(j - 1, c) = (j == c) ? 1.0 : 0.0;
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

RepOutcome outcome_from(const Eigen::VectorXd& est, const Eigen::VectorXd& se,
                        bool boundary) {
  RepOutcome out;
  out.status = boundary ? RepOutcome::Status::Boundary : RepOutcome::Status::Ok;
  out.estimate = est;
  out.se = se;
  return out;
}

RepOutcome run_estimator(EstimatorKind kind, const SimDesign& design,
                         const ClusteredDataset& data,
                         const QuadratureRule& rule) {
  const int k = design.n_questions + 1;
  try {
    if (kind == EstimatorKind::Ml || kind == EstimatorKind::Glmm) {
      const MlFit fit = kind == EstimatorKind::Ml
                            ? fit_ml(data, LinkKind::Probit, rule)
                            : fit_glmm(data, LinkKind::Probit, rule);
      if (!fit.converged || !fit.vcov_natural || !fit.marginal_beta ||
          !fit.marginal_vcov)
        return {};
      const bool ml = kind == EstimatorKind::Ml;
      const int lead = ml ? 2 : 1;
      Eigen::VectorXd est(lead + k), se(lead + k);
      const Eigen::MatrixXd& vn = *fit.vcov_natural;
      int at = 0;
      if (ml) {
        est[at] = fit.params.p;
        se[at] = std::sqrt(std::max(vn(0, 0), 0.0));
        ++at;
      }
      est[at] = fit.params.sigma_b.value_or(0.0);
      se[at] = std::sqrt(std::max(vn(1, 1), 0.0));
      ++at;
      est.tail(k) = *fit.marginal_beta;
      for (int c = 0; c < k; ++c)
        se[at + c] = std::sqrt(std::max((*fit.marginal_vcov)(c, c), 0.0));
      return outcome_from(est, se, fit.boundary_flag != BoundaryFlag::None);
    }

    const GeeFit fit = fit_gee(data, gee_kind(kind));
    if (!fit.converged || !fit.vcov) return {};
    Eigen::VectorXd est(1 + k), se(1 + k);
    est[0] = fit.params.p;
    est.tail(k) = fit.params.coeffs;
    for (int c = 0; c < 1 + k; ++c)
      se[c] = std::sqrt(std::max((*fit.vcov)(c, c), 0.0));
    return outcome_from(est, se, fit.boundary_flag != BoundaryFlag::None);
  } catch (const Error&) {
    return {};
  }
}

}  // namespace

const char* estimator_kind_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Ml: return "ML";
    case EstimatorKind::Glmm: return "GLMM";
    case EstimatorKind::GeeMI: return "GEE-MI";
    case EstimatorKind::GeeCI: return "GEE-CI";
    case EstimatorKind::GeeME: return "GEE-ME";
    case EstimatorKind::GeeCE: return "GEE-CE";
    case EstimatorKind::GeeUN: return "GEE-UN";
  }
  return "ML";
}

EstimatorKind parse_estimator_kind(const std::string& name) {
  std::string up;
  up.reserve(name.size());
  for (char c : name) up.push_back(static_cast<char>(std::toupper(c)));
  if (up == "ML") return EstimatorKind::Ml;
  if (up == "GLMM") return EstimatorKind::Glmm;
  if (up == "GEE-MI") return EstimatorKind::GeeMI;
  if (up == "GEE-CI") return EstimatorKind::GeeCI;
  if (up == "GEE-ME") return EstimatorKind::GeeME;
  if (up == "GEE-CE") return EstimatorKind::GeeCE;
  if (up == "GEE-UN") return EstimatorKind::GeeUN;
  fail(ErrorCode::UnknownEstimator, "unknown estimator '" + name + "'");
}

const SimDesign& validate_design(const SimDesign& design) {
  if (design.n_subjects < 1)
    fail(ErrorCode::InvalidDesign, "n_subjects must be at least 1");
  if (design.n_questions < 1)
    fail(ErrorCode::InvalidDesign, "n_questions must be at least 1");
  if (design.misspecified && design.n_questions < 4)
    fail(ErrorCode::InvalidDesign,
         "the misspecified generator needs at least 4 questions");
  if (design.gamma.size() != design.n_questions + 1)
    fail(ErrorCode::InvalidDesign,
         "gamma has length " + std::to_string(design.gamma.size()) +
             ", expected " + std::to_string(design.n_questions + 1));
  if (!(design.sigma_b >= 0.0))
    fail(ErrorCode::InvalidDesign, "sigma_b must be nonnegative");
  if (!(design.p >= 0.0 && design.p <= 1.0))
    fail(ErrorCode::InvalidDesign, "p must lie in [0,1]");
  if (design.replications < 1)
    fail(ErrorCode::InvalidDesign, "replications must be at least 1");
  if (design.quad_points < 1 || design.quad_points > 200)
    fail(ErrorCode::InvalidDesign, "quad_points must lie in [1,200]");
  if (!(design.ci_level > 0.0 && design.ci_level < 1.0))
    fail(ErrorCode::InvalidDesign, "ci_level must lie in (0,1)");
  if (design.estimators.empty())
    fail(ErrorCode::InvalidDesign, "at least one estimator is required");
  return design;
}

ClusteredDataset generate_correct(const SimDesign& design, int rep) {
  return generate_impl(design, rep, false);
}

ClusteredDataset generate_misspecified(const SimDesign& design, int rep) {
  if (!design.misspecified)
    fail(ErrorCode::InvalidDesign,
         "design is not flagged misspecified");
  return generate_impl(design, rep, true);
}

ClusteredDataset generate_dataset(const SimDesign& design, int rep) {
  return generate_impl(design, rep, design.misspecified);
}

Eigen::VectorXd true_marginal_beta(const SimDesign& design) {
  return design.gamma / std::sqrt(1.0 + design.sigma_b * design.sigma_b);
}

std::vector<std::string> estimator_parameter_names(EstimatorKind kind,
                                                   const SimDesign& design) {
  std::vector<std::string> names;
  if (kind != EstimatorKind::Glmm) names.push_back("Pr(Z=1)");
  if (!is_gee(kind)) names.push_back("sigma_b");
  names.push_back("beta_0");
  names.push_back("beta_x");
  for (int j = 2; j <= design.n_questions; ++j)
    names.push_back("beta_q" + std::to_string(j));
  return names;
}

Eigen::VectorXd estimator_truth(EstimatorKind kind, const SimDesign& design) {
  const Eigen::VectorXd beta = true_marginal_beta(design);
  const int k = static_cast<int>(beta.size());
  const bool with_p = kind != EstimatorKind::Glmm;
  const bool with_sigma = !is_gee(kind);
  Eigen::VectorXd truth((with_p ? 1 : 0) + (with_sigma ? 1 : 0) + k);
  int at = 0;
  if (with_p) truth[at++] = design.p;
  if (with_sigma) truth[at++] = design.sigma_b;
  truth.tail(k) = beta;
  return truth;
}

RepRecord run_one_replication(const SimDesign& design, int rep) {
  const ClusteredDataset data = generate_dataset(design, rep);
  const QuadratureRule rule = gauss_hermite(design.quad_points);
  RepRecord record;
  record.by_estimator.reserve(design.estimators.size());
  for (EstimatorKind kind : design.estimators)
    record.by_estimator.push_back(run_estimator(kind, design, data, rule));
  return record;
}

SimulationReport summarize(const SimDesign& design,
                           const std::vector<RepRecord>& records) {
  validate_design(design);
  if (records.empty())
    fail(ErrorCode::EmptyReplicationSet, "no replication records to combine");
  for (const auto& rec : records)
    if (rec.by_estimator.size() != design.estimators.size())
      fail(ErrorCode::EmptyReplicationSet,
           "replication record does not match the estimator list");

  SimulationReport report;
  report.design = design;
  for (size_t e = 0; e < design.estimators.size(); ++e) {
    const EstimatorKind kind = design.estimators[e];
    EstimatorSummary summary;
    summary.kind = kind;
    const std::vector<std::string> names =
        estimator_parameter_names(kind, design);
    const Eigen::VectorXd truth = estimator_truth(kind, design);
    const int d = static_cast<int>(names.size());

    std::vector<const RepOutcome*> used;
    for (const auto& rec : records) {
      const RepOutcome& out = rec.by_estimator[e];
      switch (out.status) {
        case RepOutcome::Status::Ok:
          if (out.estimate.size() == d && out.se.size() == d)
            used.push_back(&out);
          else
            ++summary.n_failed;
          break;
        case RepOutcome::Status::Boundary: ++summary.n_boundary; break;
        case RepOutcome::Status::Failed: ++summary.n_failed; break;
      }
    }
    summary.n_used = static_cast<int>(used.size());

    for (int c = 0; c < d; ++c) {
      ParamSummary ps;
      ps.name = names[c];
      ps.truth = truth[c];
      if (!used.empty()) {
        double mean = 0.0, mean_se = 0.0, covered = 0.0;
        for (const RepOutcome* out : used) {
          mean += out->estimate[c];
          mean_se += out->se[c];
          const auto ci =
              wald_ci(out->estimate[c], out->se[c], design.ci_level);
          if (ci.first <= truth[c] && truth[c] <= ci.second) covered += 1.0;
        }
        const double n = static_cast<double>(used.size());
        ps.mean = mean / n;
        ps.mean_se = mean_se / n;
        ps.coverage = covered / n;
        if (used.size() >= 2) {
          double ss = 0.0;
          for (const RepOutcome* out : used) {
            const double dlt = out->estimate[c] - ps.mean;
            ss += dlt * dlt;
          }
          ps.sd = std::sqrt(ss / (n - 1.0));
          ps.has_sd = true;
        }
      }
      summary.params.push_back(std::move(ps));
    }
    report.estimators.push_back(std::move(summary));
  }
  return report;
}

SimulationReport run_replications(const SimDesign& design, int threads) {
  validate_design(design);
  const int reps = design.replications;
  std::vector<RepRecord> records(reps);
  threads = std::clamp(threads, 1,
                       std::max(1, static_cast<int>(
                                       std::thread::hardware_concurrency())));
  if (threads <= 1 || reps == 1) {
    for (int r = 0; r < reps; ++r) records[r] = run_one_replication(design, r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= reps) return;
        records[r] = run_one_replication(design, r);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return summarize(design, records);
}

}  // namespace zicb
