#include "sgfa/dataset.hpp"

#include <numeric>
#include <sstream>

#include "sgfa/error.hpp"

namespace sgfa {

std::vector<int> MultiViewDataset::view_dims() const {
  std::vector<int> dims;
  dims.reserve(views.size());
  for (const auto& v : views) dims.push_back(static_cast<int>(v.rows()));
  return dims;
}

int MultiViewDataset::total_features() const {
  int total = 0;
  for (const auto& v : views) total += static_cast<int>(v.rows());
  return total;
}

bool MultiViewDataset::has_missing() const {
  for (const auto& v : views)
    if (v.hasNaN()) return true;
  return false;
}

void MultiViewDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(sample_ids.size());
  require(!views.empty(), ErrorKind::Shape, "dataset has no views");
  require(view_names.size() == views.size(), ErrorKind::Shape,
          "dataset: view_names does not match the number of views");
  require(feature_names.size() == views.size(), ErrorKind::Shape,
          "dataset: feature_names does not match the number of views");
  for (std::size_t m = 0; m < views.size(); ++m) {
    if (views[m].cols() != n) {
      std::ostringstream os;
      os << "dataset: view " << view_names[m] << " has " << views[m].cols()
         << " samples, expected " << n;
      fail(ErrorKind::Shape, os.str());
    }
    if (static_cast<Eigen::Index>(feature_names[m].size()) != views[m].rows()) {
      std::ostringstream os;
      os << "dataset: view " << view_names[m] << " has " << views[m].rows() << " rows but "
         << feature_names[m].size() << " feature names";
      fail(ErrorKind::Shape, os.str());
    }
  }
  if (labels) {
    require(static_cast<Eigen::Index>(labels->size()) == n, ErrorKind::Shape,
            "dataset: label count does not match the number of samples");
    for (int g : *labels)
      require(g >= 0 && g < num_groups(), ErrorKind::Shape, "dataset: label out of range");
  }
  if (confounds) {
    require(confounds->cols() == n, ErrorKind::Shape,
            "dataset: confound matrix does not match the number of samples");
    require(static_cast<Eigen::Index>(confound_names.size()) == confounds->rows(),
            ErrorKind::Shape, "dataset: confound names do not match confound rows");
  }
}

Eigen::MatrixXd MultiViewDataset::stacked() const {
  Eigen::MatrixXd X(total_features(), static_cast<Eigen::Index>(num_samples()));
  Eigen::Index row = 0;
  for (const auto& v : views) {
    X.middleRows(row, v.rows()) = v;
    row += v.rows();
  }
  return X;
}

MultiViewDataset make_dataset(std::vector<Eigen::MatrixXd> views) {
  MultiViewDataset data;
  const Eigen::Index n = views.empty() ? 0 : views.front().cols();
  for (std::size_t m = 0; m < views.size(); ++m) {
    data.view_names.push_back("view" + std::to_string(m + 1));
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < views[m].rows(); ++j)
      names.push_back("v" + std::to_string(m + 1) + "_f" + std::to_string(j + 1));
    data.feature_names.push_back(std::move(names));
  }
  for (Eigen::Index i = 0; i < n; ++i) data.sample_ids.push_back("s" + std::to_string(i + 1));
  data.views = std::move(views);
  data.validate();
  return data;
}

}  // namespace sgfa
