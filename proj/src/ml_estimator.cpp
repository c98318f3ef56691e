#include "zicb/ml_estimator.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "zicb/optim.hpp"

namespace zicb {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kBoundaryLogit = 12.0;
constexpr double kBoundaryLogSigma = -12.0;
constexpr double kPInterior = 1e-6;

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

double log_sum_exp2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// d/dz log(cdf(z)) with the same clamping as link_cdf, evaluated through
// logs so deep-tail probit terms do not underflow.
double cdf_log_derivative(LinkKind link, double z, double log_cdf_z) {
  if (link == LinkKind::Logit) return -std::expm1(log_cdf_z);
  return std::exp(-0.5 * z * z - kLogSqrt2Pi - log_cdf_z);
}

// Flattened evaluator for the mixture likelihood and its gradient.  The
// optimizers and the public total_loglik all route through here.
class MlProblem {
 public:
  MlProblem(const ClusteredDataset& data, LinkKind link, QuadratureRule rule,
            bool zero_inflated, bool p_free, bool sigma_free, double p_pin,
            double sigma_pin)
      : link_(link),
        rule_(std::move(rule)),
        zero_inflated_(zero_inflated),
        p_free_(p_free),
        sigma_free_(sigma_free),
        p_pin_(p_pin),
        sigma_pin_(sigma_pin),
        n_(data.n_subjects()),
        k_(data.n_covariates()) {
    const long n_obs = data.n_obs();
    x_.resize(n_obs, k_);
    sign_.resize(n_obs);
    offset_.resize(n_);
    count_.resize(n_);
    allzero_.resize(n_);
    long at = 0;
    int max_j = 0;
    for (int i = 0; i < n_; ++i) {
      const auto& s = data.subjects[i];
      const int j_i = static_cast<int>(s.y.size());
      offset_[i] = at;
      count_[i] = j_i;
      allzero_[i] = s.all_zero() ? 1 : 0;
      x_.middleRows(at, j_i) = s.x;
      for (int j = 0; j < j_i; ++j) sign_[at + j] = 2.0 * s.y[j] - 1.0;
      at += j_i;
      max_j = std::max(max_j, j_i);
    }
    const int q = rule_.order();
    logw_.resize(q);
    for (int i = 0; i < q; ++i) logw_[i] = std::log(rule_.weights[i]);
    a_.resize(n_obs);
    wobs_.resize(n_obs);
    zbuf_.resize(static_cast<size_t>(max_j) * q);
    lcbuf_.resize(static_cast<size_t>(max_j) * q);
    sq_.resize(q);
  }

  int dim() const { return (p_free_ ? 1 : 0) + (sigma_free_ ? 1 : 0) + k_; }

  Eigen::VectorXd theta(double p, double sigma,
                        const Eigen::VectorXd& gamma) const {
    Eigen::VectorXd t(dim());
    int at = 0;
    if (p_free_) t[at++] = logit(p);
    if (sigma_free_) t[at++] = std::log(sigma);
    t.tail(k_) = gamma;
    return t;
  }

  void split(const Eigen::VectorXd& t, double* p, double* sigma,
             Eigen::VectorXd* gamma) const {
    int at = 0;
    *p = p_free_ ? inverse_logit(t[at++]) : p_pin_;
    *sigma = sigma_free_ ? std::exp(t[at++]) : sigma_pin_;
    *gamma = t.tail(k_);
  }

  // Log-likelihood at natural-scale parameters; gradient (when requested) is
  // with respect to the unconstrained coordinates of the free parameters.
  double eval(double p, double sigma, const Eigen::VectorXd& gamma,
              Eigen::VectorXd* grad) {
    const bool use_nodes = sigma > 0.0;
    const int q_n = use_nodes ? rule_.order() : 1;
    a_.noalias() = x_ * gamma;
    if (grad) wobs_.setZero();

    const double logp = std::log(std::max(p, kCdfFloor));
    const double log1mp = p < 1.0 ? std::log1p(-p)
                                  : -std::numeric_limits<double>::infinity();

    KahanSum total;
    double gp = 0.0;  // d loglik / d p, natural scale
    double gs = 0.0;  // d loglik / d sigma, natural scale

    for (int i = 0; i < n_; ++i) {
      const long base = offset_[i];
      const int j_n = count_[i];

      for (int q = 0; q < q_n; ++q) {
        const double shift = use_nodes ? sigma * rule_.nodes[q] : 0.0;
        double s = 0.0;
        for (int j = 0; j < j_n; ++j) {
          const double z = sign_[base + j] * (a_[base + j] + shift);
          const double lc = std::log(link_cdf(link_, z));
          zbuf_[static_cast<size_t>(q) * j_n + j] = z;
          lcbuf_[static_cast<size_t>(q) * j_n + j] = lc;
          s += lc;
        }
        sq_[q] = s + (use_nodes ? logw_[q] : 0.0);
      }

      double smax = sq_[0];
      for (int q = 1; q < q_n; ++q) smax = std::max(smax, sq_[q]);
      double acc = 0.0;
      for (int q = 0; q < q_n; ++q) acc += std::exp(sq_[q] - smax);
      const double logf = smax + std::log(acc);

      double ll;
      double factor = 1.0;  // weight on d log f contributions
      if (!zero_inflated_) {
        ll = logf;
      } else if (!allzero_[i]) {
        ll = logp + logf;
        if (p_free_) gp += 1.0 / p;
      } else {
        const double b = logp + logf;
        ll = log_sum_exp2(log1mp, b);
        factor = std::exp(b - ll);
        if (p_free_) gp += std::exp(logf - ll) - std::exp(-ll);
      }
      total.add(ll);

      if (grad) {
        double gsi = 0.0;
        for (int q = 0; q < q_n; ++q) {
          const double wq = std::exp(sq_[q] - logf);
          if (wq < 1e-280) continue;
          double sum_scores = 0.0;
          for (int j = 0; j < j_n; ++j) {
            const double z = zbuf_[static_cast<size_t>(q) * j_n + j];
            const double lc = lcbuf_[static_cast<size_t>(q) * j_n + j];
            const double sc =
                sign_[base + j] * cdf_log_derivative(link_, z, lc);
            wobs_[base + j] += wq * sc;
            sum_scores += sc;
          }
          if (use_nodes) gsi += wq * sum_scores * rule_.nodes[q];
        }
        if (factor != 1.0) wobs_.segment(base, j_n) *= factor;
        gs += factor * gsi;
      }
    }

    if (grad) {
      grad->resize(dim());
      int at = 0;
      if (p_free_) (*grad)[at++] = gp * p * (1.0 - p);
      if (sigma_free_) (*grad)[at++] = gs * sigma;
      grad->tail(k_).noalias() = x_.transpose() * wobs_;
    }
    return total.sum;
  }

  double eval_theta(const Eigen::VectorXd& t, Eigen::VectorXd* grad) {
    double p, sigma;
    Eigen::VectorXd gamma;
    split(t, &p, &sigma, &gamma);
    return eval(p, sigma, gamma, grad);
  }

  bool p_free() const { return p_free_; }
  bool sigma_free() const { return sigma_free_; }
  int n_covariates() const { return k_; }

 private:
  LinkKind link_;
  QuadratureRule rule_;
  bool zero_inflated_, p_free_, sigma_free_;
  double p_pin_, sigma_pin_;
  int n_, k_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd sign_;
  std::vector<long> offset_;
  std::vector<int> count_;
  std::vector<char> allzero_;
  Eigen::VectorXd logw_, a_, wobs_;
  std::vector<double> zbuf_, lcbuf_, sq_;
};

FitMeta make_meta(const ClusteredDataset& data, LinkKind link,
                  const QuadratureRule& rule, bool p_fixed) {
  FitMeta meta;
  meta.n_subjects = data.n_subjects();
  meta.n_obs = data.n_obs();
  meta.n_covariates = data.n_covariates();
  meta.link = link;
  meta.quad_points = rule.order();
  meta.p_fixed = p_fixed;
  return meta;
}

// Natural-scale delta-method covariance in the order (p, sigma_b, coeffs...)
// from the unconstrained covariance of the free parameters.
Eigen::MatrixXd embed_vcov(const Eigen::MatrixXd& vcov_u, bool p_free,
                           bool sigma_free, double p, double sigma, int k) {
  const int d_free = static_cast<int>(vcov_u.rows());
  Eigen::VectorXd jac(d_free);
  std::vector<int> where(d_free);
  int at = 0;
  if (p_free) {
    jac[at] = p * (1.0 - p);
    where[at++] = 0;
  }
  if (sigma_free) {
    jac[at] = sigma;
    where[at++] = 1;
  }
  for (int c = 0; c < k; ++c) {
    jac[at] = 1.0;
    where[at++] = 2 + c;
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 + k, 2 + k);
  for (int r = 0; r < d_free; ++r)
    for (int c = 0; c < d_free; ++c)
      out(where[r], where[c]) = jac[r] * vcov_u(r, c) * jac[c];
  return out;
}

MlFit fit_impl(const ClusteredDataset& data, LinkKind link,
               const QuadratureRule& rule,
               const std::optional<ParameterSet>& init,
               const MlOptions& options, bool zero_inflated) {
  validate_dataset(data);
  if (rule.order() < 1) fail(ErrorCode::InvalidOrder, "empty quadrature rule");
  const int k = data.n_covariates();

  ParameterSet start = init ? *init : auto_init(data, link);
  if (init) {
    if (zero_inflated && !(start.p > 0.0 && start.p < 1.0))
      fail(ErrorCode::BoundaryParameter,
           "initial p must be interior to (0,1)");
    if (!(start.sigma_b.value_or(0.5) > 0.0))
      fail(ErrorCode::BoundaryParameter, "initial sigma_b must be positive");
    if (start.coeffs.size() != k)
      fail(ErrorCode::BoundaryParameter,
           "initial coefficient vector has length " +
               std::to_string(start.coeffs.size()) + ", expected " +
               std::to_string(k));
  }
  double p_cur =
      zero_inflated ? std::clamp(start.p, kPInterior, 1.0 - kPInterior) : 1.0;
  double sigma_cur = std::max(start.sigma_b.value_or(0.5), 1e-4);
  Eigen::VectorXd gamma_cur = start.coeffs;

  bool p_free = zero_inflated;
  bool sigma_free = true;
  double p_pin = 1.0;
  double sigma_pin = 0.0;

  BoundaryFlag flag = BoundaryFlag::None;
  int total_iterations = 0;
  std::vector<double> trace;

  OptimOptions opt;
  opt.max_iterations = options.max_iterations;
  opt.grad_tol = options.grad_tol;

  for (int attempt = 0; attempt < 3; ++attempt) {
    MlProblem problem(data, link, rule, zero_inflated, p_free, sigma_free,
                      p_pin, sigma_pin);
    Eigen::VectorXd theta0 = problem.theta(p_cur, sigma_cur, gamma_cur);

    Eigen::VectorXd gtmp;
    ObjectiveFn objective = [&](const Eigen::VectorXd& t,
                                Eigen::VectorXd* g) -> double {
      const double ll = problem.eval_theta(t, g ? &gtmp : nullptr);
      if (g) *g = -gtmp;
      return -ll;
    };

    BoundaryFlag hit = BoundaryFlag::None;
    IterateMonitor monitor = [&](const Eigen::VectorXd& t) -> bool {
      int at = 0;
      if (p_free) {
        const double u = t[at++];
        if (u > kBoundaryLogit) {
          hit = BoundaryFlag::PAtOne;
          return true;
        }
        if (u < -kBoundaryLogit) {
          hit = BoundaryFlag::PAtZero;
          return true;
        }
      }
      if (sigma_free && t[at] < kBoundaryLogSigma) {
        hit = BoundaryFlag::SigmaAtZero;
        return true;
      }
      return false;
    };

    OptimResult res = minimize_bfgs(objective, theta0, opt, monitor);
    total_iterations += res.iterations;
    for (double v : res.value_trace) trace.push_back(-v);

    problem.split(res.x, &p_cur, &sigma_cur, &gamma_cur);

    if (res.aborted && hit != BoundaryFlag::None) {
      if (flag == BoundaryFlag::None) flag = hit;
      if (hit == BoundaryFlag::PAtOne) {
        p_free = false;
        p_pin = 1.0;
        p_cur = 1.0;
      } else if (hit == BoundaryFlag::PAtZero) {
        p_free = false;
        p_pin = 0.0;
        p_cur = 0.0;
      } else {
        sigma_free = false;
        sigma_pin = 0.0;
        sigma_cur = 0.0;
      }
      continue;
    }

    MlFit fit;
    fit.params.coeffs = gamma_cur;
    fit.params.sigma_b = sigma_cur;
    fit.params.p = p_cur;
    fit.loglik = -res.value;
    fit.converged = res.converged;
    fit.iterations = total_iterations;
    fit.boundary_flag = flag;
    fit.loglik_trace = std::move(trace);
    fit.meta = make_meta(data, link, rule, !zero_inflated);

    if (!res.converged)
      throw MlNonConvergence(
          "likelihood optimization hit the iteration cap (" +
              std::to_string(options.max_iterations) + ") with gradient norm " +
              std::to_string(res.gradient.lpNorm<Eigen::Infinity>()),
          fit);

    if (options.with_vcov) {
      auto grad_fn = [&](const Eigen::VectorXd& t) -> Eigen::VectorXd {
        Eigen::VectorXd g;
        problem.eval_theta(t, &g);
        return g;
      };
      const Eigen::MatrixXd info =
          -fd_jacobian_symmetrized(grad_fn, res.x, 1e-4);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        Eigen::MatrixXd vcov_u = ldlt.solve(
            Eigen::MatrixXd::Identity(info.rows(), info.cols()));
        if (vcov_u.allFinite()) {
          vcov_u = 0.5 * (vcov_u + vcov_u.transpose()).eval();
          fit.vcov_natural =
              embed_vcov(vcov_u, p_free, sigma_free, p_cur, sigma_cur, k);
          fit.vcov_unconstrained = std::move(vcov_u);
        }
      }
    }

    if (link == LinkKind::Probit) {
      Eigen::MatrixXd v_gs = Eigen::MatrixXd::Zero(k + 1, k + 1);
      if (fit.vcov_natural) {
        const Eigen::MatrixXd& v = *fit.vcov_natural;
        v_gs.topLeftCorner(k, k) = v.bottomRightCorner(k, k);
        v_gs.topRightCorner(k, 1) = v.block(2, 1, k, 1);
        v_gs.bottomLeftCorner(1, k) = v.block(1, 2, 1, k);
        v_gs(k, k) = v(1, 1);
      }
      Marginalized m = marginalize(gamma_cur, sigma_cur, v_gs);
      fit.marginal_beta = m.beta;
      if (fit.vcov_natural) fit.marginal_vcov = m.vcov;
    }
    return fit;
  }

  fail(ErrorCode::NonConvergence,
       "repeated boundary restarts did not stabilize");
}

}  // namespace

const char* boundary_flag_name(BoundaryFlag flag) {
  switch (flag) {
    case BoundaryFlag::None: return "none";
    case BoundaryFlag::PAtOne: return "p_at_one";
    case BoundaryFlag::SigmaAtZero: return "sigma_at_zero";
    case BoundaryFlag::PAtZero: return "p_at_zero";
  }
  return "none";
}

double subject_loglik(const SubjectRecord& subject, const ParameterSet& params,
                      LinkKind link, const QuadratureRule& rule) {
  const double p = params.p;
  if (!(p >= 0.0 && p <= 1.0))
    fail(ErrorCode::BoundaryParameter, "p must lie in [0,1]");
  const double sigma = params.sigma_b.value_or(0.0);
  if (!(sigma >= 0.0))
    fail(ErrorCode::BoundaryParameter, "sigma_b must be nonnegative");
  if (rule.order() < 1) fail(ErrorCode::InvalidOrder, "empty quadrature rule");

  const Eigen::VectorXd eta = subject.x * params.coeffs;
  const int j_n = static_cast<int>(subject.y.size());

  const int q_n = sigma > 0.0 ? rule.order() : 1;
  std::vector<double> terms(q_n);
  for (int q = 0; q < q_n; ++q) {
    const double b = sigma > 0.0 ? sigma * rule.nodes[q] : 0.0;
    double s = sigma > 0.0 ? std::log(rule.weights[q]) : 0.0;
    for (int j = 0; j < j_n; ++j) {
      const double sign = 2.0 * subject.y[j] - 1.0;
      s += std::log(link_cdf(link, sign * (eta[j] + b)));
    }
    terms[q] = s;
  }
  double m = terms[0];
  for (int q = 1; q < q_n; ++q) m = std::max(m, terms[q]);
  double acc = 0.0;
  for (int q = 0; q < q_n; ++q) acc += std::exp(terms[q] - m);
  const double logf = m + std::log(acc);

  if (!subject.all_zero())
    return std::log(std::max(p, kCdfFloor)) + logf;
  const double log1mp =
      p < 1.0 ? std::log1p(-p) : -std::numeric_limits<double>::infinity();
  return log_sum_exp2(log1mp, std::log(std::max(p, kCdfFloor)) + logf);
}

double total_loglik(const ClusteredDataset& data, const ParameterSet& params,
                    LinkKind link, const QuadratureRule& rule) {
  MlProblem problem(data, link, rule, /*zero_inflated=*/true, true, true, 1.0,
                    0.0);
  const double sigma = params.sigma_b.value_or(0.0);
  if (!(sigma >= 0.0))
    fail(ErrorCode::BoundaryParameter, "sigma_b must be nonnegative");
  return problem.eval(params.p, sigma, params.coeffs, nullptr);
}

Eigen::VectorXd total_loglik_gradient(const ClusteredDataset& data,
                                      const ParameterSet& params,
                                      LinkKind link,
                                      const QuadratureRule& rule) {
  MlProblem problem(data, link, rule, true, true, true, 1.0, 0.0);
  Eigen::VectorXd g;
  problem.eval(params.p, *params.sigma_b, params.coeffs, &g);
  return g;
}

Eigen::VectorXd pooled_glm(const ClusteredDataset& data, LinkKind link) {
  const int k = data.n_covariates();
  const long n = data.n_obs();
  Eigen::MatrixXd x(n, k);
  Eigen::VectorXd y(n);
  long at = 0;
  for (const auto& s : data.subjects) {
    x.middleRows(at, s.y.size()) = s.x;
    y.segment(at, s.y.size()) = s.y;
    at += s.y.size();
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::VectorXd eta = x * beta;
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(k);
    for (long i = 0; i < n; ++i) {
      const double c = link_cdf(link, eta[i]);
      const double d = link_pdf(link, eta[i]);
      const double v = c * (1.0 - c);
      const double w = d * d / v;
      score += x.row(i).transpose() * (d * (y[i] - c) / v);
      info += w * (x.row(i).transpose() * x.row(i));
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) break;
    const Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) break;
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-8) break;
  }
  for (int c = 0; c < k; ++c) beta[c] = std::clamp(beta[c], -8.0, 8.0);
  return beta;
}

ParameterSet auto_init(const ClusteredDataset& data, LinkKind link) {
  const double n_obs = static_cast<double>(data.n_obs());
  double positives = 0.0;
  double allzero = 0.0;
  for (const auto& s : data.subjects) {
    positives += s.y.sum();
    allzero += s.all_zero() ? 1.0 : 0.0;
  }
  const double ybar = positives / n_obs;
  const double zbar = allzero / data.n_subjects();
  double zrand = 0.0;
  for (const auto& s : data.subjects)
    zrand += std::pow(1.0 - ybar, static_cast<double>(s.y.size()));
  zrand /= data.n_subjects();

  ParameterSet init;
  init.p = std::min(0.95, std::max(0.05, 1.0 - std::max(0.0, zbar - zrand)));
  init.sigma_b = 0.5;
  init.coeffs = pooled_glm(data, link) * std::sqrt(1.25);
  return init;
}

MlFit fit_ml(const ClusteredDataset& data, LinkKind link,
             const QuadratureRule& rule,
             const std::optional<ParameterSet>& init,
             const MlOptions& options) {
  return fit_impl(data, link, rule, init, options, /*zero_inflated=*/true);
}

MlFit fit_glmm(const ClusteredDataset& data, LinkKind link,
               const QuadratureRule& rule,
               const std::optional<ParameterSet>& init,
               const MlOptions& options) {
  return fit_impl(data, link, rule, init, options, /*zero_inflated=*/false);
}

Eigen::MatrixXd observed_information(const ClusteredDataset& data,
                                     const ParameterSet& params_hat,
                                     LinkKind link,
                                     const QuadratureRule& rule) {
  validate_dataset(data);
  const Eigen::VectorXd theta = pack_params(params_hat, ParamMode::Ml);
  MlProblem problem(data, link, rule, true, true, true, 1.0, 0.0);
  auto grad_fn = [&](const Eigen::VectorXd& t) -> Eigen::VectorXd {
    Eigen::VectorXd g;
    problem.eval_theta(t, &g);
    return g;
  };
  const Eigen::MatrixXd info = -fd_jacobian_symmetrized(grad_fn, theta, 1e-4);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    fail(ErrorCode::SingularHessian,
         "observed information is not positive definite");
  return info;
}

Marginalized marginalize(const Eigen::VectorXd& gamma, double sigma_b,
                         const Eigen::MatrixXd& vcov_gamma_sigma) {
  if (sigma_b < 0.0)
    throw std::invalid_argument("marginalize: sigma_b must be nonnegative");
  const int k = static_cast<int>(gamma.size());
  if (vcov_gamma_sigma.rows() != k + 1 || vcov_gamma_sigma.cols() != k + 1)
    throw std::invalid_argument(
        "marginalize: covariance must be (k+1)x(k+1) over (coeffs, sigma_b)");
  const double s2 = 1.0 + sigma_b * sigma_b;
  const double s = std::sqrt(s2);

  Marginalized out;
  out.beta = gamma / s;
  Eigen::MatrixXd jac(k, k + 1);
  jac.leftCols(k) = Eigen::MatrixXd::Identity(k, k) / s;
  jac.col(k) = -gamma * sigma_b / (s2 * s);
  out.vcov = jac * vcov_gamma_sigma * jac.transpose();
  return out;
}

}  // namespace zicb
