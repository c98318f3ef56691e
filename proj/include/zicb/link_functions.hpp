#pragma once

namespace zicb {

enum class LinkKind { Probit, Logit };

const char* link_kind_name(LinkKind kind);

// Linear predictors are clamped to [-kEtaClamp, kEtaClamp] before any CDF
// evaluation, and CDF values are kept strictly inside (0,1) so that
// log-likelihood terms stay finite.
inline constexpr double kEtaClamp = 37.5;
inline constexpr double kCdfFloor = 1e-300;

double link_cdf(LinkKind kind, double eta);
double link_pdf(LinkKind kind, double eta);
double link_quantile(LinkKind kind, double prob);

double normal_cdf(double x);
double normal_pdf(double x);

// Wichura's AS 241 rational approximation (double precision branch).
double normal_quantile(double p);

}  // namespace zicb
