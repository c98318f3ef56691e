#include "zicb/link_functions.hpp"

#include <algorithm>
#include <cmath>

#include "zicb/errors.hpp"

namespace zicb {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double clamp_cdf(double c) {
  return std::min(std::max(c, kCdfFloor), 1.0 - 1e-16);
}

}  // namespace

const char* link_kind_name(LinkKind kind) {
  return kind == LinkKind::Probit ? "probit" : "logit";
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double link_cdf(LinkKind kind, double eta) {
  eta = std::clamp(eta, -kEtaClamp, kEtaClamp);
  double c;
  if (kind == LinkKind::Probit) {
    c = normal_cdf(eta);
  } else {
    c = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta))
                   : std::exp(eta) / (1.0 + std::exp(eta));
  }
  return clamp_cdf(c);
}

double link_pdf(LinkKind kind, double eta) {
  eta = std::clamp(eta, -kEtaClamp, kEtaClamp);
  if (kind == LinkKind::Probit) return normal_pdf(eta);
  const double e = std::exp(-std::abs(eta));
  const double denom = 1.0 + e;
  return e / (denom * denom);
}

double link_quantile(LinkKind kind, double prob) {
  if (!(prob > 0.0 && prob < 1.0))
    fail(ErrorCode::InvalidLevel, "quantile probability must lie in (0,1)");
  if (kind == LinkKind::Probit) return normal_quantile(prob);
  return std::log(prob / (1.0 - prob));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    fail(ErrorCode::InvalidLevel, "quantile probability must lie in (0,1)");

  static const double a[8] = {
      3.3871328727963666080e0,  1.3314166789178437745e+2,
      1.9715909503065514427e+3, 1.3731693765509461125e+4,
      4.5921953931549871457e+4, 6.7265770927008700853e+4,
      3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static const double b[8] = {
      1.0,                      4.2313330701600911252e+1,
      6.8718700749205790830e+2, 5.3941960214247511077e+3,
      2.1213794301586595867e+4, 3.9307895800092710610e+4,
      2.8729085735721942674e+4, 5.2264952788528545610e+3};
  static const double c[8] = {
      1.42343711074968357734e0,    4.63033784615654529590e0,
      5.76949722146069140550e0,    3.64784832476320460504e0,
      1.27045825245236838258e0,    2.41780725177450611770e-1,
      2.27238449892691845833e-2,   7.74545014278341407640e-4};
  static const double d[8] = {
      1.0,                        2.05319162663775882187e0,
      1.67638483018380384940e0,   6.89767334985100004550e-1,
      1.48103976427480074590e-1,  1.51986665636164571966e-2,
      5.47593808499534494600e-4,  1.05075007164441684324e-9};
  static const double e[8] = {
      6.65790464350110377720e0,    5.46378491116411436990e0,
      1.78482653991729133580e0,    2.96560571828504891230e-1,
      2.65321895265761230930e-2,   1.24266094738807843860e-3,
      2.71155556874348757815e-5,   2.01033439929228813265e-7};
  static const double f[8] = {
      1.0,                        5.99832206555887937690e-1,
      1.36929880922735805310e-1,  1.48753612908506148525e-2,
      7.86869131145613259100e-4,  1.84631831751005468180e-6,
      1.42151175831644588870e-15, 0.0};

  auto ratio = [](const double* num, const double* den, double r) {
    double n = num[7], m = den[7];
    for (int i = 6; i >= 0; --i) {
      n = n * r + num[i];
      m = m * r + den[i];
    }
    return n / m;
  };

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * ratio(a, b, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    val = ratio(c, d, r - 1.6);
  } else {
    val = ratio(e, f, r - 5.0);
  }
  return q < 0.0 ? -val : val;
}

}  // namespace zicb
