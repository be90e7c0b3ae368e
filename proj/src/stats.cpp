#include "sgfa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "sgfa/error.hpp"

namespace sgfa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numerical: return "numerical-failure";
    case ErrorKind::Adaptation: return "adaptation-failure";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Dependency: return "dependency";
  }
  return "unknown";
}

namespace stats {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_finite(double v, const char* fn, const char* name) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << fn << ": " << name << " is not finite (" << v << ")";
    fail(ErrorKind::InvalidArgument, os.str());
  }
}

void check_positive(double v, const char* fn, const char* name) {
  check_finite(v, fn, name);
  if (!(v > 0.0)) {
    std::ostringstream os;
    os << fn << ": " << name << " must be > 0, got " << v;
    fail(ErrorKind::InvalidArgument, os.str());
  }
}

void check_nonnegative_support(double x, const char* fn) {
  if (std::isnan(x) || x < 0.0 || x == kInf) {
    std::ostringstream os;
    os << fn << ": x = " << x << " outside support";
    fail(ErrorKind::InvalidArgument, os.str());
  }
}

}  // namespace

double log_pdf_normal(double x, double mu, double sd) {
  check_finite(x, "log_pdf_normal", "x");
  check_finite(mu, "log_pdf_normal", "mu");
  check_positive(sd, "log_pdf_normal", "sd");
  const double z = (x - mu) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}

double log_pdf_half_cauchy(double x, double scale) {
  check_nonnegative_support(x, "log_pdf_half_cauchy");
  check_positive(scale, "log_pdf_half_cauchy", "scale");
  const double r = x / scale;
  return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(r * r);
}

double log_pdf_gamma(double x, double shape, double rate) {
  check_nonnegative_support(x, "log_pdf_gamma");
  check_positive(shape, "log_pdf_gamma", "shape");
  check_positive(rate, "log_pdf_gamma", "rate");
  if (x == 0.0) {
    if (shape < 1.0) return kInf;
    if (shape > 1.0) return -kInf;
    return std::log(rate);
  }
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

double log_pdf_inv_gamma(double x, double shape, double scale) {
  check_nonnegative_support(x, "log_pdf_inv_gamma");
  check_positive(shape, "log_pdf_inv_gamma", "shape");
  check_positive(scale, "log_pdf_inv_gamma", "scale");
  if (x == 0.0) return -kInf;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) -
         scale / x;
}

void DistParams::validate() const {
  check_finite(p1, "DistParams", "p1");
  check_positive(p2, "DistParams", "p2");
  if (family == Family::HalfCauchy && p1 != 0.0)
    fail(ErrorKind::InvalidArgument, "DistParams: half-Cauchy location is fixed at 0");
  if ((family == Family::Gamma || family == Family::InvGamma) && !(p1 > 0.0))
    fail(ErrorKind::InvalidArgument, "DistParams: shape must be > 0");
}

double DistParams::log_pdf(double x) const {
  switch (family) {
    case Family::Normal: return log_pdf_normal(x, p1, p2);
    case Family::Gamma: return log_pdf_gamma(x, p1, p2);
    case Family::InvGamma: return log_pdf_inv_gamma(x, p1, p2);
    case Family::HalfCauchy:
      validate();
      return log_pdf_half_cauchy(x, p2);
  }
  fail(ErrorKind::InvalidArgument, "DistParams: unknown family");
}

TransformedValue to_positive(double unconstrained, std::size_t coordinate) {
  if (!std::isfinite(unconstrained)) {
    std::ostringstream os;
    os << "to_positive: coordinate " << coordinate << " is not finite (" << unconstrained
       << ")";
    fail(ErrorKind::InvalidArgument, os.str());
  }
  const double c = std::exp(unconstrained);
  if (!std::isfinite(c)) {
    std::ostringstream os;
    os << "to_positive: exp overflow at coordinate " << coordinate << " (u = " << unconstrained
       << ")";
    fail(ErrorKind::Numerical, os.str());
  }
  return {unconstrained, c, unconstrained};
}

TransformedValue to_positive(double unconstrained) { return to_positive(unconstrained, 0); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    fail(ErrorKind::Shape, "cosine_similarity: vectors differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0)
    fail(ErrorKind::Degenerate, "cosine_similarity: undefined for a zero vector");
  const double c = ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(c, -1.0, 1.0);
}

std::vector<double> normalized_group_means(std::span<const double> values,
                                           std::span<const int> labels, int num_groups) {
  if (values.size() != labels.size())
    fail(ErrorKind::Shape, "normalized_group_means: values and labels differ in length");
  if (num_groups < 1) fail(ErrorKind::InvalidArgument, "normalized_group_means: no groups");
  std::vector<double> sums(num_groups, 0.0);
  std::vector<std::size_t> counts(num_groups, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int g = labels[i];
    if (g < 0 || g >= num_groups)
      fail(ErrorKind::InvalidArgument, "normalized_group_means: label out of range");
    sums[g] += values[i];
    ++counts[g];
  }
  double total = 0.0;
  for (int g = 0; g < num_groups; ++g) {
    if (counts[g] == 0) {
      std::ostringstream os;
      os << "normalized_group_means: group " << g << " is empty";
      fail(ErrorKind::InvalidArgument, os.str());
    }
    sums[g] /= static_cast<double>(counts[g]);
    total += sums[g];
  }
  if (!(total > 0.0))
    fail(ErrorKind::Degenerate, "normalized_group_means: all group means are zero");
  for (double& s : sums) s /= total;
  return sums;
}

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace stats
}  // namespace sgfa
