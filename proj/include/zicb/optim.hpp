#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

namespace zicb {

// f(x, grad): returns the objective value; fills *grad when non-null.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

// Called after every accepted step; returning true aborts the run (used to
// catch parameters drifting to a boundary).
using IterateMonitor = std::function<bool(const Eigen::VectorXd&)>;

struct OptimOptions {
  int max_iterations = 500;
  double grad_tol = 1e-6;  // max-norm of the gradient
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
  bool aborted = false;               // monitor fired
  std::vector<double> value_trace;    // objective at each accepted iterate
};

// BFGS (inverse-Hessian update) with Armijo backtracking line search.
OptimResult minimize_bfgs(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                          const OptimOptions& options = {},
                          const IterateMonitor& monitor = {});

// Central differences with per-coordinate step h_j = step_scale*max(1,|x_j|).
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step_scale = 1e-4);

// Central differences of a gradient function, symmetrized as (H+H^T)/2.
Eigen::MatrixXd fd_jacobian_symmetrized(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& x, double step_scale = 1e-4);

}  // namespace zicb
