#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "sgfa/sampler.hpp"

namespace testing_targets {

/// Multivariate normal with the given mean and covariance.
inline sgfa::Target gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd prec = cov.inverse();
  sgfa::Target t;
  t.dim = static_cast<std::size_t>(mean.size());
  t.log_prob_grad = [mean, prec](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    const Eigen::VectorXd r = q - mean;
    g = -prec * r;
    return -0.5 * r.dot(prec * r);
  };
  t.coordinate_name = [](std::size_t i) { return "x[" + std::to_string(i) + "]"; };
  return t;
}

inline sgfa::Target standard_normal(int dim) {
  return gaussian(Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Identity(dim, dim));
}

inline sgfa::Target correlated_2d(double rho) {
  Eigen::Matrix2d cov;
  cov << 1.0, rho, rho, 1.0;
  return gaussian(Eigen::Vector2d::Zero(), cov);
}

/// Gamma(shape, rate) on the log scale, Jacobian included.
inline sgfa::Target log_gamma(double shape, double rate) {
  sgfa::Target t;
  t.dim = 1;
  t.log_prob_grad = [shape, rate](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    const double e = rate * std::exp(q[0]);
    g.resize(1);
    g[0] = shape - e;
    return shape * q[0] - e;
  };
  return t;
}

}  // namespace testing_targets
