#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sgfa::stats {

enum class Family { Normal, Gamma, InvGamma, HalfCauchy };

/// Parameters of one of the four densities the models use.
///
///   Normal:     p1 = mean,  p2 = standard deviation
///   Gamma:      p1 = shape, p2 = rate
///   InvGamma:   p1 = shape, p2 = scale
///   HalfCauchy: p1 = 0,     p2 = scale
struct DistParams {
  Family family;
  double p1;
  double p2;

  void validate() const;
  double log_pdf(double x) const;
};

/// A positive quantity together with the unconstrained coordinate it came from.
struct TransformedValue {
  double unconstrained;
  double constrained;
  double log_jacobian;
};

double log_pdf_normal(double x, double mu, double sd);

/// log of 2 / (pi * scale * (1 + (x/scale)^2)) on x >= 0.
double log_pdf_half_cauchy(double x, double scale);

/// Shape-rate parameterisation: x^(a-1) exp(-b x) b^a / Gamma(a).
/// x == 0 (exp underflow of the unconstrained coordinate) returns the limit.
double log_pdf_gamma(double x, double shape, double rate);

/// Shape-scale parameterisation: x^(-a-1) exp(-b/x) b^a / Gamma(a).
/// x == 0 returns -inf.
double log_pdf_inv_gamma(double x, double shape, double scale);

/// exp transform. Throws a numerical error if exp overflows.
TransformedValue to_positive(double unconstrained);

/// Same as to_positive, with the coordinate index reported on overflow.
TransformedValue to_positive(double unconstrained, std::size_t coordinate);

/// a.b / (|a| |b|). Throws if either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Mean of values per group, normalised so the group means sum to one.
/// Labels must lie in [0, num_groups); every group must be non-empty.
std::vector<double> normalized_group_means(std::span<const double> values,
                                           std::span<const int> labels,
                                           int num_groups);

/// log(exp(a) + exp(b)), safe for -inf arguments.
double log_sum_exp(double a, double b);

}  // namespace sgfa::stats
