#include "zicb/gee_estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace zicb {

namespace {

constexpr double kAlphaClamp = 0.99;
constexpr double kPClamp = 1e-6;
constexpr double kVarFloor = 1e-12;

double clamp_alpha(double a) {
  return std::clamp(a, -kAlphaClamp, kAlphaClamp);
}

long count_pairs(const ClusteredDataset& data) {
  long pairs = 0;
  for (const auto& s : data.subjects) {
    const long j = s.y.size();
    pairs += j * (j - 1) / 2;
  }
  return pairs;
}

// Shared single-pass accumulator: estimating function (natural scale),
// Fisher-scoring matrices on the internal scale [logit(p), beta], and the
// sandwich pieces.
struct GeePass {
  Eigen::VectorXd g_nat;   // sum D'V^{-1} r over (p, beta)
  Eigen::VectorXd g_int;
  Eigen::MatrixXd a_int;   // sum D'V^{-1} D, internal scale
  Eigen::MatrixXd a_nat;
  Eigen::MatrixXd b_nat;   // sum D'V^{-1} r r' V^{-1} D
};

GeePass gee_pass(const ClusteredDataset& data, CorrelationKind kind,
                 double p, const Eigen::VectorXd& beta, double alpha,
                 const Eigen::MatrixXd* alpha_un, bool want_b) {
  const int k = static_cast<int>(beta.size());
  const int d = 1 + k;
  GeePass out;
  out.g_nat = Eigen::VectorXd::Zero(d);
  out.a_nat = Eigen::MatrixXd::Zero(d, d);
  if (want_b) out.b_nat = Eigen::MatrixXd::Zero(d, d);

  for (const auto& s : data.subjects) {
    const int j_n = static_cast<int>(s.y.size());
    const Eigen::VectorXd eta = s.x * beta;
    Eigen::VectorXd mu_z(j_n), pdf(j_n), mu(j_n), a_sqrt(j_n);
    for (int j = 0; j < j_n; ++j) {
      mu_z[j] = link_cdf(LinkKind::Probit, eta[j]);
      pdf[j] = link_pdf(LinkKind::Probit, eta[j]);
      mu[j] = p * mu_z[j];
      a_sqrt[j] = std::sqrt(std::max(mu[j] * (1.0 - mu[j]), kVarFloor));
    }
    const Eigen::MatrixXd r_mat =
        working_correlation(kind, mu_z, p, alpha, alpha_un);
    Eigen::MatrixXd v = a_sqrt.asDiagonal() * r_mat * a_sqrt.asDiagonal();

    Eigen::MatrixXd d_nat(j_n, d);
    d_nat.col(0) = mu_z;
    for (int j = 0; j < j_n; ++j)
      d_nat.row(j).tail(k) = (p * pdf[j]) * s.x.row(j);

    const Eigen::VectorXd resid = s.y - mu;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    if (ldlt.info() != Eigen::Success)
      fail(ErrorCode::NonPDWorkingCorrelation,
           "working covariance factorization failed for subject '" + s.id +
               "'");
    const Eigen::MatrixXd vinv_d = ldlt.solve(d_nat);
    const Eigen::VectorXd vinv_r = ldlt.solve(resid);

    out.g_nat.noalias() += d_nat.transpose() * vinv_r;
    out.a_nat.noalias() += d_nat.transpose() * vinv_d;
    if (want_b) {
      const Eigen::VectorXd dtvr = d_nat.transpose() * vinv_r;
      out.b_nat.noalias() += dtvr * dtvr.transpose();
    }
  }

  const double scale = p * (1.0 - p);
  out.g_int = out.g_nat;
  out.g_int[0] *= scale;
  out.a_int = out.a_nat;
  out.a_int.row(0) *= scale;
  out.a_int.col(0) *= scale;
  return out;
}

double ef_norm_at(const ClusteredDataset& data, CorrelationKind kind, double p,
                  const Eigen::VectorXd& beta, double alpha,
                  const Eigen::MatrixXd* alpha_un) {
  return gee_pass(data, kind, p, beta, alpha, alpha_un, false)
      .g_nat.lpNorm<Eigen::Infinity>();
}

GeeFit finalize_fit(const ClusteredDataset& data, CorrelationKind kind,
                    const GeeOptions& options, GeeFit fit) {
  if (options.with_vcov) {
    try {
      fit.vcov = detail::sandwich_at(data, kind, fit.params, true);
    } catch (const Error&) {
      fit.vcov.reset();
    }
  }
  return fit;
}

}  // namespace

const char* correlation_kind_name(CorrelationKind kind) {
  switch (kind) {
    case CorrelationKind::MI: return "MI";
    case CorrelationKind::CI: return "CI";
    case CorrelationKind::ME: return "ME";
    case CorrelationKind::CE: return "CE";
    case CorrelationKind::UN: return "UN";
  }
  return "MI";
}

double marginal_mean(const Eigen::VectorXd& x_row, const Eigen::VectorXd& beta,
                     double p) {
  return p * link_cdf(LinkKind::Probit, x_row.dot(beta));
}

Eigen::VectorXd mean_jacobian(const Eigen::VectorXd& x_row,
                              const Eigen::VectorXd& beta, double p) {
  const double eta = x_row.dot(beta);
  Eigen::VectorXd jac(1 + x_row.size());
  jac[0] = link_cdf(LinkKind::Probit, eta);
  jac.tail(x_row.size()) = p * link_pdf(LinkKind::Probit, eta) * x_row;
  return jac;
}

double unconditional_cov(double mu_zj, double mu_zk, double p,
                         double cond_cov) {
  return cond_cov * p + mu_zj * mu_zk * p * (1.0 - p);
}

Eigen::MatrixXd working_correlation(CorrelationKind kind,
                                    const Eigen::VectorXd& mu_z, double p,
                                    double alpha,
                                    const Eigen::MatrixXd* alpha_un) {
  const int j_n = static_cast<int>(mu_z.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(j_n, j_n);

  auto marg_sd = [&](int j) {
    const double m = p * mu_z[j];
    return std::sqrt(std::max(m * (1.0 - m), kVarFloor));
  };

  switch (kind) {
    case CorrelationKind::MI:
      break;
    case CorrelationKind::ME:
      for (int j = 0; j < j_n; ++j)
        for (int k = j + 1; k < j_n; ++k) r(j, k) = r(k, j) = alpha;
      break;
    case CorrelationKind::CI:
    case CorrelationKind::CE:
      for (int j = 0; j < j_n; ++j) {
        for (int k = j + 1; k < j_n; ++k) {
          double cov = mu_z[j] * mu_z[k] * p * (1.0 - p);
          if (kind == CorrelationKind::CE)
            cov += alpha * p *
                   std::sqrt(mu_z[j] * (1.0 - mu_z[j]) * mu_z[k] *
                             (1.0 - mu_z[k]));
          r(j, k) = r(k, j) = cov / (marg_sd(j) * marg_sd(k));
        }
      }
      break;
    case CorrelationKind::UN: {
      if (alpha_un == nullptr || alpha_un->rows() != j_n ||
          alpha_un->cols() != j_n)
        fail(ErrorCode::InsufficientData,
             "unstructured correlation matrix missing or of wrong size");
      r = *alpha_un;
      r.diagonal().setOnes();
      break;
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r,
                                                    Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-10)
    fail(ErrorCode::NonPDWorkingCorrelation,
         std::string(correlation_kind_name(kind)) +
             " working correlation has minimum eigenvalue " +
             std::to_string(es.eigenvalues().minCoeff()));
  return r;
}

AlphaEstimate estimate_alpha(CorrelationKind kind,
                             const ClusteredDataset& data,
                             const std::vector<Eigen::VectorXd>& mu_z,
                             double p) {
  AlphaEstimate out;
  if (kind == CorrelationKind::MI || kind == CorrelationKind::CI) return out;
  if (data.n_subjects() < 2)
    fail(ErrorCode::InsufficientData,
         "correlation estimation needs at least 2 subjects");
  if (mu_z.size() != data.subjects.size())
    throw std::invalid_argument("estimate_alpha: mu_z size mismatch");
  if (count_pairs(data) == 0)
    fail(ErrorCode::InsufficientData,
         "correlation estimation needs clusters with at least 2 responses");

  if (kind == CorrelationKind::UN) {
    const int j_n = static_cast<int>(data.subjects.front().y.size());
    for (const auto& s : data.subjects)
      if (s.y.size() != j_n)
        fail(ErrorCode::InsufficientData,
             "unstructured correlation requires a constant cluster size");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(j_n, j_n);
    for (int i = 0; i < data.n_subjects(); ++i) {
      const auto& s = data.subjects[i];
      Eigen::VectorXd e(j_n);
      for (int j = 0; j < j_n; ++j) {
        const double m = p * mu_z[i][j];
        e[j] = (s.y[j] - m) /
               std::sqrt(std::max(m * (1.0 - m), kVarFloor));
      }
      acc.noalias() += e * e.transpose();
    }
    acc /= data.n_subjects();
    out.matrix = Eigen::MatrixXd::Identity(j_n, j_n);
    for (int j = 0; j < j_n; ++j)
      for (int k2 = 0; k2 < j_n; ++k2)
        if (j != k2) out.matrix(j, k2) = clamp_alpha(acc(j, k2));
    return out;
  }

  double num = 0.0;
  double den = 0.0;
  long n_pairs = 0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subjects[i];
    const int j_n = static_cast<int>(s.y.size());
    for (int j = 0; j < j_n; ++j) {
      for (int k2 = j + 1; k2 < j_n; ++k2) {
        const double mzj = mu_z[i][j], mzk = mu_z[i][k2];
        const double mj = p * mzj, mk = p * mzk;
        if (kind == CorrelationKind::ME) {
          const double ej =
              (s.y[j] - mj) / std::sqrt(std::max(mj * (1.0 - mj), kVarFloor));
          const double ek =
              (s.y[k2] - mk) /
              std::sqrt(std::max(mk * (1.0 - mk), kVarFloor));
          num += ej * ek;
        } else {  // CE: strip the latent-class part, rescale to the
                  // conditional exchangeable correlation.  Summing numerator
                  // and denominator separately (a ratio of sums) keeps pairs
                  // with near-degenerate fitted probabilities from dominating
                  // the estimate; both forms target the same correlation.
          const double raw = (s.y[j] - mj) * (s.y[k2] - mk);
          const double latent = mzj * mzk * p * (1.0 - p);
          num += raw - latent;
          den += p * std::sqrt(std::max(
                     mzj * (1.0 - mzj) * mzk * (1.0 - mzk), kVarFloor));
        }
        ++n_pairs;
      }
    }
  }
  out.value = kind == CorrelationKind::CE
                  ? clamp_alpha(num / std::max(den, kVarFloor))
                  : clamp_alpha(num / static_cast<double>(n_pairs));
  return out;
}

GeeFit fit_gee(const ClusteredDataset& data, CorrelationKind kind,
               const std::optional<ParameterSet>& init,
               const GeeOptions& options) {
  validate_dataset(data);
  const int k = data.n_covariates();
  const bool needs_alpha = kind == CorrelationKind::ME ||
                           kind == CorrelationKind::CE ||
                           kind == CorrelationKind::UN;
  if (kind == CorrelationKind::UN) {
    const auto j0 = data.subjects.front().y.size();
    for (const auto& s : data.subjects)
      if (s.y.size() != j0)
        fail(ErrorCode::InsufficientData,
             "unstructured correlation requires a constant cluster size");
  }
  if (needs_alpha && count_pairs(data) == 0)
    fail(ErrorCode::InsufficientData,
         "correlation estimation needs clusters with at least 2 responses");

  double p;
  Eigen::VectorXd beta;
  if (init) {
    if (!(init->p > 0.0 && init->p < 1.0))
      fail(ErrorCode::BoundaryParameter, "initial p must be interior to (0,1)");
    if (init->coeffs.size() != k)
      fail(ErrorCode::BoundaryParameter,
           "initial coefficient vector has length " +
               std::to_string(init->coeffs.size()) + ", expected " +
               std::to_string(k));
    p = init->p;
    beta = init->coeffs;
  } else {
    const ParameterSet ml_start = auto_init(data, LinkKind::Probit);
    p = ml_start.p;
    // The pooled GLM targets E[y] = F(x'b), but the mixture mean is
    // p * F(x'beta).  Invert observation-wise and refit by least squares so
    // the start is consistent with the marginal mean; the clamp also keeps
    // the initial linear predictors away from saturation when the pooled fit
    // separates.
    const Eigen::VectorXd pooled = pooled_glm(data, LinkKind::Probit);
    long n_total = 0;
    for (const auto& s : data.subjects) n_total += s.y.size();
    Eigen::MatrixXd x_all(n_total, k);
    Eigen::VectorXd eta_star(n_total);
    long row = 0;
    for (const auto& s : data.subjects)
      for (long j = 0; j < s.x.rows(); ++j, ++row) {
        x_all.row(row) = s.x.row(j);
        const double target =
            std::clamp(link_cdf(LinkKind::Probit, s.x.row(j).dot(pooled)) / p,
                       1e-4, 1.0 - 1e-4);
        eta_star(row) = link_quantile(LinkKind::Probit, target);
      }
    beta = x_all.colPivHouseholderQr().solve(eta_star);
    if (!beta.allFinite()) beta = pooled;
  }
  const double u_cap = logit(1.0 - kPClamp);
  double u = std::clamp(logit(std::clamp(p, kPClamp, 1.0 - kPClamp)), -u_cap,
                        u_cap);
  p = inverse_logit(u);

  long j_max = 0;
  for (const auto& s : data.subjects)
    j_max = std::max<long>(j_max, s.y.size());
  const double alpha_floor =
      j_max > 1 ? -1.0 / static_cast<double>(j_max - 1) + 1e-3 : -kAlphaClamp;

  double alpha = options.fixed_alpha.value_or(0.0);
  Eigen::MatrixXd alpha_un;
  const Eigen::MatrixXd* alpha_un_ptr = nullptr;
  if (kind == CorrelationKind::UN) {
    const int j0 = static_cast<int>(data.subjects.front().y.size());
    alpha_un = Eigen::MatrixXd::Identity(j0, j0);
    alpha_un_ptr = &alpha_un;
  }

  auto mu_z_at = [&](const Eigen::VectorXd& b) {
    std::vector<Eigen::VectorXd> mu_z(data.subjects.size());
    for (size_t i = 0; i < data.subjects.size(); ++i) {
      const Eigen::VectorXd eta = data.subjects[i].x * b;
      mu_z[i].resize(eta.size());
      for (Eigen::Index j = 0; j < eta.size(); ++j)
        mu_z[i][j] = link_cdf(LinkKind::Probit, eta[j]);
    }
    return mu_z;
  };

  auto make_fit = [&](bool converged, int iterations, double ef) {
    GeeFit fit;
    fit.params.coeffs = beta;
    fit.params.p = p;
    if (kind == CorrelationKind::ME || kind == CorrelationKind::CE)
      fit.params.alpha = alpha;
    if (kind == CorrelationKind::UN) fit.params.alpha_un = alpha_un;
    fit.converged = converged;
    fit.iterations = iterations;
    fit.ef_norm = ef;
    fit.kind = kind;
    if (u >= u_cap - 1e-9) fit.boundary_flag = BoundaryFlag::PAtOne;
    fit.meta.n_subjects = data.n_subjects();
    fit.meta.n_obs = data.n_obs();
    fit.meta.n_covariates = k;
    fit.meta.link = LinkKind::Probit;
    fit.meta.quad_points = 0;
    fit.meta.p_fixed = false;
    return fit;
  };

  double last_change = std::numeric_limits<double>::infinity();
  double ef_cur = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    GeePass pass = gee_pass(data, kind, p, beta, alpha, alpha_un_ptr, false);
    ef_cur = pass.g_nat.lpNorm<Eigen::Infinity>();
    if (ef_cur < options.ef_tol && last_change < options.param_tol)
      return finalize_fit(data, kind, options, make_fit(true, iter - 1, ef_cur));

    Eigen::LDLT<Eigen::MatrixXd> ldlt(pass.a_int);
    Eigen::VectorXd delta = ldlt.solve(pass.g_int);
    const bool solved = ldlt.info() == Eigen::Success && delta.allFinite();

    double u_new = u, p_new = p;
    Eigen::VectorXd beta_new = beta;

    auto try_direction = [&](const Eigen::VectorXd& dir, bool force_last) {
      double step = 1.0;
      for (int halving = 0; halving <= options.max_halvings; ++halving) {
        u_new = std::clamp(u + step * dir[0], -u_cap, u_cap);
        p_new = inverse_logit(u_new);
        beta_new = beta + step * dir.tail(k);
        double ef_new;
        try {
          ef_new = ef_norm_at(data, kind, p_new, beta_new, alpha, alpha_un_ptr);
        } catch (const Error&) {
          // a wild trial can break the working covariance; treat it as a
          // failed trial, not a failed fit
          ef_new = std::numeric_limits<double>::infinity();
        }
        if (std::isfinite(ef_new) &&
            (ef_new < ef_cur ||
             (force_last && halving == options.max_halvings)))
          return true;
        step *= 0.5;
      }
      return false;
    };

    bool accepted = solved && try_direction(delta, false);
    if (!accepted) {
      // the raw scoring direction made no progress (or the system was
      // singular); retry with escalating Levenberg damping, which both
      // regularizes the solve and bends the direction toward the gradient
      const double damp_scale =
          std::max(pass.a_int.diagonal().cwiseAbs().maxCoeff(), 1.0);
      for (double lambda : {1e-6, 1e-4, 1e-2, 1.0, 1e2}) {
        Eigen::MatrixXd damped = pass.a_int;
        damped.diagonal().array() += lambda * damp_scale;
        Eigen::LDLT<Eigen::MatrixXd> dldlt(damped);
        Eigen::VectorXd ddir = dldlt.solve(pass.g_int);
        if (dldlt.info() != Eigen::Success || !ddir.allFinite()) continue;
        if (try_direction(ddir, false)) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      // the scoring matrix is only the expected Jacobian and can point
      // uphill when residuals are large and one-sided; rescue with a
      // finite-difference Jacobian of the actual score and
      // Levenberg-Marquardt steps on ||g||^2
      const int dim = k + 1;
      Eigen::MatrixXd jac(dim, dim);
      bool jac_ok = true;
      const double h = 1e-5;
      for (int c = 0; c < dim && jac_ok; ++c) {
        double u_hi = u, u_lo = u;
        Eigen::VectorXd b_hi = beta, b_lo = beta;
        if (c == 0) {
          u_hi += h;
          u_lo -= h;
        } else {
          b_hi[c - 1] += h;
          b_lo[c - 1] -= h;
        }
        try {
          const GeePass hi = gee_pass(data, kind, inverse_logit(u_hi), b_hi,
                                      alpha, alpha_un_ptr, false);
          const GeePass lo = gee_pass(data, kind, inverse_logit(u_lo), b_lo,
                                      alpha, alpha_un_ptr, false);
          jac.col(c) = (hi.g_nat - lo.g_nat) / (2.0 * h);
        } catch (const Error&) {
          jac_ok = false;
        }
      }
      if (jac_ok && jac.allFinite()) {
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtg = jac.transpose() * pass.g_nat;
        const double jscale =
            std::max(jtj.diagonal().cwiseAbs().maxCoeff(), 1e-12);
        for (double lambda : {1e-4, 1e-2, 1.0, 1e2}) {
          Eigen::MatrixXd m = jtj;
          m.diagonal().array() += lambda * jscale;
          Eigen::LDLT<Eigen::MatrixXd> mldlt(m);
          Eigen::VectorXd dir = -mldlt.solve(jtg);
          if (mldlt.info() != Eigen::Success || !dir.allFinite()) continue;
          if (try_direction(dir, false)) {
            accepted = true;
            break;
          }
        }
      }
    }
    // last resort: crawl along the most-halved raw step so a transient
    // plateau does not abort the fit outright
    if (!accepted && solved) accepted = try_direction(delta, true);
    if (!accepted)
      throw GeeNonConvergence(solved ? "step halving found no usable iterate"
                                     : "scoring step failed to solve",
                              make_fit(false, iter, ef_cur));

    last_change = std::max((beta_new - beta).lpNorm<Eigen::Infinity>(),
                           std::abs(p_new - p));
    u = u_new;
    p = p_new;
    beta = beta_new;

    if (needs_alpha && !options.fixed_alpha) {
      const AlphaEstimate est = estimate_alpha(kind, data, mu_z_at(beta), p);
      if (kind == CorrelationKind::UN) {
        alpha_un = est.matrix;
      } else {
        // project below-bound estimates back inside the exchangeable
        // positive-definite region (transient early iterates can overshoot)
        alpha = std::max(est.value, alpha_floor);
      }
    }
  }

  throw GeeNonConvergence(
      "estimating equations did not converge in " +
          std::to_string(options.max_iterations) + " iterations (ef norm " +
          std::to_string(ef_cur) + ")",
      make_fit(false, options.max_iterations, ef_cur));
}

Eigen::MatrixXd sandwich_vcov(const ClusteredDataset& data,
                              const GeeFit& fit) {
  return detail::sandwich_at(data, fit.kind, fit.params, true);
}

namespace detail {

Eigen::MatrixXd sandwich_at(const ClusteredDataset& data,
                            CorrelationKind kind, const ParameterSet& params,
                            bool estimate_p) {
  const Eigen::MatrixXd* alpha_un_ptr =
      params.alpha_un ? &*params.alpha_un : nullptr;
  GeePass pass = gee_pass(data, kind, params.p, params.coeffs,
                          params.alpha.value_or(0.0), alpha_un_ptr, true);
  Eigen::MatrixXd a = pass.a_nat;
  Eigen::MatrixXd b = pass.b_nat;
  if (!estimate_p) {
    a = a.bottomRightCorner(a.rows() - 1, a.cols() - 1).eval();
    b = b.bottomRightCorner(b.rows() - 1, b.cols() - 1).eval();
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    fail(ErrorCode::SingularBread, "bread matrix is singular");
  const Eigen::MatrixXd a_inv =
      ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  if (!a_inv.allFinite())
    fail(ErrorCode::SingularBread, "bread matrix is singular");
  Eigen::MatrixXd v = a_inv * b * a_inv.transpose();
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

}  // namespace zicb
