#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgfa/dataset.hpp"

namespace sgfa {

struct LoadOptions {
  /// CSV keyed by sample ID holding subgroup labels.
  std::optional<std::filesystem::path> labels_path;
  /// Column of labels_path to use; the first value column when empty.
  std::string label_column;
  /// CSV keyed by sample ID holding confound columns.
  std::optional<std::filesystem::path> confounds_path;
};

/// Loads one CSV per view (rows = samples, first column = sample ID) and
/// aligns them by ID in the order of the first file.
MultiViewDataset load_views(const std::vector<std::filesystem::path>& paths,
                            const LoadOptions& options = {});

/// Same, from in-memory CSV text; names are used as view names.
MultiViewDataset load_views_from_text(const std::vector<std::string>& texts,
                                      const std::vector<std::string>& names,
                                      const std::optional<std::string>& labels_text = {},
                                      const std::string& label_column = {},
                                      const std::optional<std::string>& confounds_text = {});

struct DroppedSample {
  std::string id;
  double missing_fraction = 0.0;
};

struct DroppedFeature {
  int view = 0;
  std::string name;
  double missing_fraction = 0.0;
};

struct ImputedFeature {
  int view = 0;
  std::string name;
  double median = 0.0;
  int count = 0;
};

enum class SdConvention { Population, Sample };

/// Everything the preprocessing chain did, in enough detail to replay it.
struct PreprocessReport {
  std::vector<std::string> steps;

  std::optional<double> sample_threshold;
  std::optional<int> sample_view;  // view used for the sample rule; all views when empty
  std::vector<DroppedSample> dropped_samples;

  std::optional<double> feature_threshold;
  std::vector<DroppedFeature> dropped_features;

  std::vector<ImputedFeature> imputed;

  /// Per view, D_m x (1 + C) OLS coefficients, intercept first.
  std::vector<Eigen::MatrixXd> confound_coefficients;
  std::vector<std::string> confound_names;

  SdConvention sd_convention = SdConvention::Population;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::VectorXd> sds;

  std::string to_json() const;
  static PreprocessReport from_json(const std::string& text);
};

/// Removes samples whose missing fraction (over one view, or all views) is
/// strictly above the threshold.
MultiViewDataset drop_high_missing_samples(const MultiViewDataset& data, double threshold,
                                           std::optional<int> view, PreprocessReport& report);

/// Removes features whose missing fraction is strictly above the threshold.
MultiViewDataset drop_high_missing(const MultiViewDataset& data, double threshold,
                                   PreprocessReport& report);

/// Fills missing cells with the median of the observed values of the feature.
MultiViewDataset median_impute(const MultiViewDataset& data, PreprocessReport& report);

/// Replaces every feature by its OLS residual on [1, confounds].
MultiViewDataset regress_confounds(const MultiViewDataset& data, PreprocessReport& report);

/// Centres and scales every feature to mean 0 and sd 1.
MultiViewDataset standardize(const MultiViewDataset& data, PreprocessReport& report,
                             SdConvention convention = SdConvention::Population);

struct PreprocessOptions {
  std::optional<double> sample_threshold;  // e.g. 1/3
  std::optional<int> sample_view;
  double feature_threshold = 0.10;
  bool impute = true;
  bool regress = true;  // only when the dataset carries confounds
  bool standardize = true;
  SdConvention sd_convention = SdConvention::Population;
};

/// The full chain in its fixed order: drop samples, drop features, impute,
/// regress confounds, standardise.
MultiViewDataset preprocess(const MultiViewDataset& data, const PreprocessOptions& options,
                            PreprocessReport& report);

/// Re-applies a recorded chain to raw data without re-estimating anything.
MultiViewDataset replay(const MultiViewDataset& raw, const PreprocessReport& report);

}  // namespace sgfa
