#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace sgfa {

/// N samples observed across M feature blocks ("views").
///
/// Views are stored feature-major (D_m x N) so that a view is directly the
/// X^(m) of the factor model. Missing cells are NaN until imputed.
struct MultiViewDataset {
  std::vector<Eigen::MatrixXd> views;
  std::vector<std::string> view_names;
  std::vector<std::vector<std::string>> feature_names;
  std::vector<std::string> sample_ids;

  /// Subgroup index per sample, in [0, group_names.size()).
  std::optional<std::vector<int>> labels;
  std::vector<std::string> group_names;

  /// C x N confound matrix.
  std::optional<Eigen::MatrixXd> confounds;
  std::vector<std::string> confound_names;

  std::size_t num_views() const { return views.size(); }
  std::size_t num_samples() const { return sample_ids.size(); }
  std::vector<int> view_dims() const;
  int total_features() const;
  int num_groups() const { return static_cast<int>(group_names.size()); }

  bool has_missing() const;

  /// Throws a shape error when views, names, labels or confounds disagree on N.
  void validate() const;

  /// All views stacked vertically (sum D_m x N).
  Eigen::MatrixXd stacked() const;
};

/// Builds a dataset with generated names ("view1", "v1_f1", "s1", ...).
MultiViewDataset make_dataset(std::vector<Eigen::MatrixXd> views);

}  // namespace sgfa
