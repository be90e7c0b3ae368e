#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sgfa/dataset.hpp"

namespace sgfa {

/// Three-view, three-subgroup benchmark with known factor structure.
///
/// Factor k loads on a disjoint block of ceil(D_m/3) features in every view.
/// Factor 0 is expressed by subgroup 0, factor 1 by subgroup 1 and the last
/// factor by all samples. noise_sd holds standard deviations (rho = 1/sd^2).
struct SyntheticScenario {
  int num_factors = 3;
  std::vector<int> group_sizes{50, 50, 50};
  std::vector<int> view_dims{60, 40, 20};
  std::vector<double> noise_sd{3.0, 6.0, 4.0};
  double lambda_active = 100.0;
  double lambda_inactive_w = 0.01;
  double lambda_inactive_z = 0.001;
  double tau_z = 0.01;
  double nu = 2.0;
  double s = 2.0;
  std::uint64_t seed = 1;

  int num_samples() const;
  void validate() const;
};

struct GroundTruth {
  Eigen::MatrixXd W;  // sum D_m x K, views stacked
  Eigen::MatrixXd Z;  // K x N
  std::vector<int> view_dims;
  std::vector<int> labels;
  int num_groups = 0;
  Eigen::MatrixXi feature_mask;  // sum D_m x K, 1 where active
  Eigen::MatrixXi sample_mask;   // K x N, 1 where active
  std::vector<double> noise_sd;
  std::uint64_t seed = 0;

  int num_factors() const { return static_cast<int>(W.cols()); }
  Eigen::MatrixXd view_loadings(int m) const;
};

struct SyntheticData {
  MultiViewDataset data;
  GroundTruth truth;
};

SyntheticData generate(const SyntheticScenario& scenario);

/// Per-subgroup mean |z| of every true factor, rows normalised to sum 1.
Eigen::MatrixXd true_contributions(const GroundTruth& truth);

std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const std::string& text);

}  // namespace sgfa
