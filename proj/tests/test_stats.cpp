#include <gtest/gtest.h>

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>
#include <random>
#include <vector>

#include "sgfa/error.hpp"
#include "sgfa/stats.hpp"

using namespace sgfa;
using namespace sgfa::stats;
using hp = boost::multiprecision::cpp_dec_float_50;

namespace {

// High-precision closed forms, written independently of the library.
double hp_normal(double x, double mu, double sd) {
  const hp z = (hp(x) - hp(mu)) / hp(sd);
  const hp two_pi = 2 * boost::math::constants::pi<hp>();
  return static_cast<double>(-log(sqrt(two_pi) * hp(sd)) - z * z / 2);
}

double hp_half_cauchy(double x, double s) {
  const hp r = hp(x) / hp(s);
  return static_cast<double>(log(hp(2) / (boost::math::constants::pi<hp>() * hp(s) * (1 + r * r))));
}

double hp_gamma(double x, double a, double b) {
  const hp X(x), A(a), B(b);
  return static_cast<double>(A * log(B) - boost::multiprecision::lgamma(A) + (A - 1) * log(X) - B * X);
}

double hp_inv_gamma(double x, double a, double b) {
  const hp X(x), A(a), B(b);
  return static_cast<double>(A * log(B) - boost::multiprecision::lgamma(A) - (A + 1) * log(X) - B / X);
}

double integrate_positive(const std::function<double(double)>& f) {
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(f);
}

}  // namespace

TEST(LogPdfNormal, StandardNormalMode) {
  EXPECT_NEAR(log_pdf_normal(0.0, 0.0, 1.0), -0.9189385332046727, 1e-12);
  EXPECT_NEAR(log_pdf_normal(1.0, 0.0, 1.0), -1.4189385332046727, 1e-12);
}

TEST(LogPdfNormal, MatchesHighPrecisionOracle) {
  EXPECT_NEAR(log_pdf_normal(0.7, 0.2, 1.3), hp_normal(0.7, 0.2, 1.3), 1e-10);
  const double sd = 1.3;
  const double integral = boost::math::quadrature::tanh_sinh<double>().integrate(
      [&](double x) { return std::exp(log_pdf_normal(x, 0.2, sd)); },
      -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(integral, 1.0, 1e-6);
}

TEST(LogPdfNormal, RejectsBadArguments) {
  EXPECT_THROW(log_pdf_normal(0.0, 0.0, 0.0), Error);
  EXPECT_THROW(log_pdf_normal(0.0, 0.0, -1.0), Error);
  EXPECT_THROW(log_pdf_normal(std::nan(""), 0.0, 1.0), Error);
  EXPECT_THROW(log_pdf_normal(INFINITY, 0.0, 1.0), Error);
  try {
    log_pdf_normal(0.0, 0.0, -1.0);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(LogPdfHalfCauchy, AnalyticValues) {
  EXPECT_NEAR(log_pdf_half_cauchy(0.0, 1.0), std::log(2.0 / M_PI), 1e-12);
  EXPECT_NEAR(log_pdf_half_cauchy(0.0, 1.0), -0.4515827052894548, 1e-12);
  EXPECT_NEAR(log_pdf_half_cauchy(1.0, 1.0), -1.1447298858494002, 1e-12);
  EXPECT_NEAR(log_pdf_half_cauchy(2.5, 0.7), hp_half_cauchy(2.5, 0.7), 1e-10);
}

TEST(LogPdfHalfCauchy, SupportViolation) {
  EXPECT_THROW(log_pdf_half_cauchy(-0.1, 1.0), Error);
  EXPECT_THROW(log_pdf_half_cauchy(1.0, 0.0), Error);
}

TEST(LogPdfHalfCauchy, ScaleFamilyProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(0.0, 20.0), us(0.01, 10.0);
  for (int i = 0; i < 200; ++i) {
    const double x = ux(rng), s = us(rng);
    EXPECT_NEAR(log_pdf_half_cauchy(x, s), log_pdf_half_cauchy(x / s, 1.0) - std::log(s), 1e-12);
  }
}

TEST(LogPdfGamma, Values) {
  EXPECT_NEAR(log_pdf_gamma(1.0, 1.0, 1.0), -1.0, 1e-14);
  EXPECT_NEAR(log_pdf_gamma(2.0, 3.0, 1.0), std::log(4.0 * std::exp(-2.0) / 2.0), 1e-12);
  EXPECT_NEAR(log_pdf_gamma(2.0, 3.0, 1.0), hp_gamma(2.0, 3.0, 1.0), 1e-10);
  EXPECT_NEAR(log_pdf_gamma(1e-300, 1.0, 2.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(log_pdf_gamma(0.0, 1.0, 2.0), std::log(2.0), 1e-12);
  EXPECT_THROW(log_pdf_gamma(-1.0, 1.0, 1.0), Error);
  EXPECT_THROW(log_pdf_gamma(1.0, 0.0, 1.0), Error);
}

TEST(LogPdfInvGamma, Values) {
  EXPECT_NEAR(log_pdf_inv_gamma(1.0, 1.0, 1.0), -1.0, 1e-14);
  EXPECT_NEAR(log_pdf_inv_gamma(2.0, 2.0, 2.0), hp_inv_gamma(2.0, 2.0, 2.0), 1e-10);
  EXPECT_THROW(log_pdf_inv_gamma(-1.0, 1.0, 1.0), Error);
  EXPECT_EQ(log_pdf_inv_gamma(0.0, 2.0, 2.0), -INFINITY);
}

TEST(LogPdf, RandomisedHighPrecisionAgreement) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 8.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), a = u(rng), b = u(rng);
    EXPECT_NEAR(log_pdf_gamma(x, a, b), hp_gamma(x, a, b), 1e-10);
    EXPECT_NEAR(log_pdf_inv_gamma(x, a, b), hp_inv_gamma(x, a, b), 1e-10);
    EXPECT_NEAR(log_pdf_half_cauchy(x, b), hp_half_cauchy(x, b), 1e-10);
    EXPECT_NEAR(log_pdf_normal(x, a, b), hp_normal(x, a, b), 1e-10);
  }
}

// Every density integrates to one over its support, for random parameters.
TEST(LogPdf, QuadratureNormalisation) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> shape(1.2, 6.0), scale(0.3, 4.0), mean(-3.0, 3.0);
  for (int i = 0; i < 10; ++i) {
    const double a = shape(rng), b = scale(rng), mu = mean(rng);
    const double normal = boost::math::quadrature::tanh_sinh<double>().integrate(
        [&](double x) { return std::exp(log_pdf_normal(x, mu, b)); }, -INFINITY, INFINITY);
    EXPECT_NEAR(normal, 1.0, 1e-6) << "normal mu=" << mu << " sd=" << b;
    const double gamma =
        integrate_positive([&](double x) { return std::exp(log_pdf_gamma(x, a, b)); });
    EXPECT_NEAR(gamma, 1.0, 1e-6) << "gamma a=" << a << " b=" << b;
    const double inv_gamma =
        integrate_positive([&](double x) { return std::exp(log_pdf_inv_gamma(x, a, b)); });
    EXPECT_NEAR(inv_gamma, 1.0, 1e-6) << "inv-gamma a=" << a << " b=" << b;
    // The half-Cauchy tail decays like 1/x^2; integrate the mass in u = atan(x/s).
    const double half_cauchy = boost::math::quadrature::tanh_sinh<double>().integrate(
        [&](double t) {
          const double x = b * std::tan(t);
          const double dx = b / (std::cos(t) * std::cos(t));
          return std::exp(log_pdf_half_cauchy(x, b)) * dx;
        },
        0.0, M_PI / 2);
    EXPECT_NEAR(half_cauchy, 1.0, 1e-6) << "half-Cauchy s=" << b;
  }
}

TEST(DistParams, DispatchAndValidation) {
  EXPECT_NEAR((DistParams{Family::Normal, 0.0, 1.0}.log_pdf(1.0)), log_pdf_normal(1.0, 0.0, 1.0),
              0.0);
  EXPECT_NEAR((DistParams{Family::Gamma, 2.0, 3.0}.log_pdf(1.5)), log_pdf_gamma(1.5, 2.0, 3.0),
              0.0);
  EXPECT_NEAR((DistParams{Family::InvGamma, 2.0, 3.0}.log_pdf(1.5)),
              log_pdf_inv_gamma(1.5, 2.0, 3.0), 0.0);
  EXPECT_NEAR((DistParams{Family::HalfCauchy, 0.0, 3.0}.log_pdf(1.5)),
              log_pdf_half_cauchy(1.5, 3.0), 0.0);
  EXPECT_THROW((DistParams{Family::HalfCauchy, 1.0, 3.0}.validate()), Error);
  EXPECT_THROW((DistParams{Family::Normal, 0.0, 0.0}.validate()), Error);
}

TEST(ToPositive, Values) {
  const auto a = to_positive(0.0);
  EXPECT_EQ(a.constrained, 1.0);
  EXPECT_EQ(a.log_jacobian, 0.0);
  const auto b = to_positive(std::log(2.0));
  EXPECT_NEAR(b.constrained, 2.0, 1e-15);
  EXPECT_NEAR(b.log_jacobian, std::log(2.0), 1e-15);
  for (double c : {1e-6, 1.0, 1e6})
    EXPECT_NEAR(to_positive(std::log(c)).constrained / c, 1.0, 1e-12);
}

TEST(ToPositive, JacobianMatchesDerivative) {
  for (double u : {-5.0, -1.0, 0.0, 0.3, 4.0}) {
    const double h = 1e-6;
    const double deriv =
        (to_positive(u + h).constrained - to_positive(u - h).constrained) / (2.0 * h);
    EXPECT_NEAR(to_positive(u).log_jacobian, std::log(deriv), 1e-8);
  }
}

TEST(ToPositive, OverflowNamesCoordinate) {
  try {
    to_positive(1000.0, 42);
    FAIL() << "expected an overflow error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
  EXPECT_THROW(to_positive(std::nan("")), Error);
}

TEST(CosineSimilarity, Values) {
  const std::vector<double> a{1, 0}, b{0, 1}, c{1, 2, 3}, d{-1, -2, -3};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(c, d), -1.0, 1e-15);
}

TEST(CosineSimilarity, Errors) {
  const std::vector<double> z{0, 0}, a{1, 0}, l{1, 2, 3};
  EXPECT_THROW(cosine_similarity(z, a), Error);
  EXPECT_THROW(cosine_similarity(a, l), Error);
}

TEST(CosineSimilarity, ScaleAndSignProperties) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(7), b(7), ka(7), na(7);
    const double k = std::exp(n(rng));
    for (int j = 0; j < 7; ++j) {
      a[j] = n(rng);
      b[j] = n(rng);
      ka[j] = k * a[j];
      na[j] = -a[j];
    }
    const double s = cosine_similarity(a, b);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_NEAR(cosine_similarity(ka, b), s, 1e-12);
    EXPECT_NEAR(cosine_similarity(na, b), -s, 1e-12);
  }
}

TEST(NormalizedGroupMeans, Values) {
  const std::vector<double> v{3, 3, 1, 1, 0, 0};
  const std::vector<int> g{0, 0, 1, 1, 2, 2};
  const auto r = normalized_group_means(v, g, 3);
  EXPECT_NEAR(r[0], 0.75, 1e-15);
  EXPECT_NEAR(r[1], 0.25, 1e-15);
  EXPECT_NEAR(r[2], 0.0, 1e-15);
  const std::vector<int> missing_group{0, 0, 0, 1, 1, 1};
  EXPECT_THROW(normalized_group_means(v, missing_group, 3), Error);
}

TEST(LogSumExp, Values) {
  EXPECT_NEAR(log_sum_exp(0.0, 0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(log_sum_exp(-INFINITY, 1.5), 1.5);
  EXPECT_NEAR(log_sum_exp(1000.0, 1000.0), 1000.0 + std::log(2.0), 1e-12);
}
