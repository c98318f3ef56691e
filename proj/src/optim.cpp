#include "zicb/optim.hpp"

#include <algorithm>
#include <cmath>

namespace zicb {

OptimResult minimize_bfgs(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                          const OptimOptions& options,
                          const IterateMonitor& monitor) {
  const int d = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;
  res.gradient.resize(d);
  res.value = f(res.x, &res.gradient);
  res.value_trace.push_back(res.value);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(d, d);
  bool first_update = true;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (res.gradient.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      res.converged = true;
      return res;
    }

    Eigen::VectorXd dir = -(h_inv * res.gradient);
    double slope = dir.dot(res.gradient);
    if (!(slope < 0.0)) {  // lost positive definiteness; restart
      h_inv.setIdentity();
      first_update = true;
      dir = -res.gradient;
      slope = dir.dot(res.gradient);
    }
    if (first_update) {
      const double scale =
          1.0 / std::max(1.0, res.gradient.lpNorm<Eigen::Infinity>());
      dir *= scale;
      slope *= scale;
    }

    // Armijo backtracking.
    constexpr double c1 = 1e-4;
    double step = 1.0;
    double f_new = 0.0;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= res.value + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged =
          res.gradient.lpNorm<Eigen::Infinity>() < options.grad_tol;
      return res;  // line search stalled; caller inspects gradient
    }

    Eigen::VectorXd g_new(d);
    f_new = f(x_new, &g_new);

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd yv = g_new - res.gradient;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (first_update) {
        h_inv *= sy / yv.squaredNorm();
        first_update = false;
      }
      const Eigen::VectorXd hy = h_inv * yv;
      const double yhy = yv.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    res.x = x_new;
    res.value = f_new;
    res.gradient = g_new;
    res.iterations = iter + 1;
    res.value_trace.push_back(res.value);

    if (monitor && monitor(res.x)) {
      res.aborted = true;
      return res;
    }
  }
  res.converged = res.gradient.lpNorm<Eigen::Infinity>() < options.grad_tol;
  return res;
}

Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step_scale) {
  const int d = static_cast<int>(x.size());
  Eigen::VectorXd g(d);
  Eigen::VectorXd xp = x;
  for (int j = 0; j < d; ++j) {
    const double h = step_scale * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_jacobian_symmetrized(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& x, double step_scale) {
  const int d = static_cast<int>(x.size());
  Eigen::MatrixXd h_mat(d, d);
  Eigen::VectorXd xp = x;
  for (int j = 0; j < d; ++j) {
    const double h = step_scale * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const Eigen::VectorXd gp = grad(xp);
    xp[j] = x[j] - h;
    const Eigen::VectorXd gm = grad(xp);
    xp[j] = x[j];
    h_mat.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (h_mat + h_mat.transpose());
}

}  // namespace zicb
