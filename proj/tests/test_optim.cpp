#include <doctest.h>

#include <cmath>

#include "zicb/optim.hpp"

namespace {

// f(x) = 0.5 (x-c)'A(x-c) with A = diag(1, 4)
double quad_obj(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
  Eigen::Vector2d c(1.0, -2.0);
  Eigen::Vector2d d = x - c;
  Eigen::Vector2d a(1.0, 4.0);
  if (grad) *grad = (a.array() * d.array()).matrix();
  return 0.5 * (a.array() * d.array().square()).sum();
}

double rosenbrock(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
  const double a = 1.0, b = 100.0;
  const double f = (a - x[0]) * (a - x[0]) +
                   b * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]);
  if (grad) {
    grad->resize(2);
    (*grad)[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
    (*grad)[1] = 2.0 * b * (x[1] - x[0] * x[0]);
  }
  return f;
}

}  // namespace

TEST_CASE("quadratic bowl is solved to tight tolerance") {
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  zicb::OptimOptions opts;
  opts.grad_tol = 1e-10;
  const auto res = zicb::minimize_bfgs(quad_obj, x0, opts);
  CHECK(res.converged);
  CHECK(std::abs(res.x[0] - 1.0) < 1e-8);
  CHECK(std::abs(res.x[1] + 2.0) < 1e-8);
  CHECK(res.gradient.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("rosenbrock from the classic start") {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  zicb::OptimOptions opts;
  opts.max_iterations = 2000;
  opts.grad_tol = 1e-8;
  const auto res = zicb::minimize_bfgs(rosenbrock, x0, opts);
  CHECK(res.converged);
  CHECK(std::abs(res.x[0] - 1.0) < 1e-5);
  CHECK(std::abs(res.x[1] - 1.0) < 1e-5);
}

TEST_CASE("objective trace is nonincreasing") {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  const auto res = zicb::minimize_bfgs(rosenbrock, x0);
  REQUIRE(res.value_trace.size() > 1);
  for (size_t i = 1; i < res.value_trace.size(); ++i) {
    CHECK(res.value_trace[i] <= res.value_trace[i - 1] + 1e-12);
  }
  CHECK(res.value_trace.back() == doctest::Approx(res.value).epsilon(1e-12));
}

TEST_CASE("monitor can abort the run") {
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  int calls = 0;
  const auto res = zicb::minimize_bfgs(
      quad_obj, x0, {}, [&](const Eigen::VectorXd&) { return ++calls >= 1; });
  CHECK(res.aborted);
  CHECK_FALSE(res.converged);
  CHECK(calls == 1);
}

TEST_CASE("finite difference gradient on a cubic") {
  auto f = [](const Eigen::VectorXd& x) {
    return x[0] * x[0] * x[0] + 2.0 * x[0] * x[1] + std::exp(x[1]);
  };
  Eigen::VectorXd x(2);
  x << 0.7, -0.4;
  const auto g = zicb::fd_gradient(f, x);
  CHECK(std::abs(g[0] - (3.0 * 0.7 * 0.7 + 2.0 * -0.4)) < 1e-6);
  CHECK(std::abs(g[1] - (2.0 * 0.7 + std::exp(-0.4))) < 1e-6);
}

TEST_CASE("symmetrized jacobian recovers a quadratic hessian") {
  Eigen::MatrixXd a(2, 2);
  a << 3.0, 0.5, 0.5, 1.5;
  auto grad = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return a * x;
  };
  Eigen::VectorXd x(2);
  x << 0.3, -1.1;
  const auto h = zicb::fd_jacobian_symmetrized(grad, x);
  CHECK((h - a).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-14);
}
