#pragma once

#include <Eigen/Core>
#include <functional>

namespace zicb {

// Nodes and weights for E[f(T)], T ~ N(0,1): sum_q weights[q] * f(nodes[q]).
// Weights sum to one, nodes are symmetric about zero.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  int order() const { return static_cast<int>(nodes.size()); }
};

// Golub-Welsch on the Jacobi matrix of the orthonormal (probabilists')
// Hermite polynomials, with Newton refinement of the roots and weights from
// the Christoffel function.
QuadratureRule gauss_hermite(int n_points);

// E[f(mean + sd * T)], T ~ N(0,1). A zero sd evaluates f(mean) exactly.
double expect_normal(const std::function<double(double)>& f, double mean,
                     double sd, const QuadratureRule& rule);

}  // namespace zicb
