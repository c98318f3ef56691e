#include "zicb/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "zicb/errors.hpp"

namespace zicb {

namespace {

// Value and derivative of the orthonormal Hermite polynomial of degree n at
// x, via the three-term recurrence p_{k+1} = (x p_k - sqrt(k) p_{k-1}) /
// sqrt(k+1).  All roots lie in the oscillatory region where these values
// stay of moderate size, so the recurrence is stable in double precision.
void hermite_eval(int n, double x, double* value, double* derivative) {
  double pm1 = 0.0;
  double p = 1.0;  // degree 0, orthonormal under N(0,1)
  for (int k = 0; k < n; ++k) {
    const double pk1 =
        (x * p - std::sqrt(static_cast<double>(k)) * pm1) /
        std::sqrt(static_cast<double>(k + 1));
    pm1 = p;
    p = pk1;
  }
  *value = p;
  *derivative = std::sqrt(static_cast<double>(n)) * pm1;
}

// Christoffel weight: 1 / sum_{k<n} p_k(x)^2.
double christoffel_weight(int n, double x) {
  double pm1 = 0.0;
  double p = 1.0;  // p_0
  double sum = 1.0;
  for (int k = 0; k + 1 < n; ++k) {
    const double pk1 =
        (x * p - std::sqrt(static_cast<double>(k)) * pm1) /
        std::sqrt(static_cast<double>(k + 1));
    pm1 = p;
    p = pk1;
    sum += p * p;
  }
  return 1.0 / sum;
}

}  // namespace

QuadratureRule gauss_hermite(int n_points) {
  if (n_points < 1 || n_points > 200)
    fail(ErrorCode::InvalidOrder,
         "quadrature order must lie in [1,200], got " +
             std::to_string(n_points));

  QuadratureRule rule;
  rule.nodes.resize(n_points);
  rule.weights.resize(n_points);
  if (n_points == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 1.0;
    return rule;
  }

  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_points);
  Eigen::VectorXd sub(n_points - 1);
  for (int k = 1; k < n_points; ++k)
    sub[k - 1] = std::sqrt(static_cast<double>(k));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  Eigen::VectorXd roots = solver.eigenvalues();  // ascending

  // Polish each root with a couple of Newton steps, then enforce exact
  // symmetry by mirroring the nonnegative half.
  for (int i = 0; i < n_points; ++i) {
    double x = roots[i];
    for (int it = 0; it < 3; ++it) {
      double v, dv;
      hermite_eval(n_points, x, &v, &dv);
      const double step = v / dv;
      x -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    roots[i] = x;
  }

  const int half = n_points / 2;
  for (int i = 0; i < half; ++i) {
    const double x = 0.5 * (roots[n_points - 1 - i] - roots[i]);
    const double w = 0.5 * (christoffel_weight(n_points, x) +
                            christoffel_weight(n_points, -x));
    rule.nodes[n_points - 1 - i] = x;
    rule.nodes[i] = -x;
    rule.weights[n_points - 1 - i] = w;
    rule.weights[i] = w;
  }
  if (n_points % 2 == 1) {
    rule.nodes[half] = 0.0;
    rule.weights[half] = christoffel_weight(n_points, 0.0);
  }
  return rule;
}

double expect_normal(const std::function<double(double)>& f, double mean,
                     double sd, const QuadratureRule& rule) {
  if (rule.order() < 1)
    fail(ErrorCode::InvalidOrder, "empty quadrature rule");
  if (sd == 0.0) {
    const double v = f(mean);
    if (!std::isfinite(v))
      fail(ErrorCode::NonFiniteIntegrand,
           "integrand not finite at " + std::to_string(mean));
    return v;
  }
  double acc = 0.0;
  for (int q = 0; q < rule.order(); ++q) {
    const double x = mean + sd * rule.nodes[q];
    const double v = f(x);
    if (!std::isfinite(v))
      fail(ErrorCode::NonFiniteIntegrand,
           "integrand not finite at node " + std::to_string(q) + " (x=" +
               std::to_string(x) + ")");
    acc += rule.weights[q] * v;
  }
  return acc;
}

}  // namespace zicb
