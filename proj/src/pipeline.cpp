#include "sgfa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "sgfa/error.hpp"
#include "sgfa/io.hpp"

namespace sgfa {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& items, std::size_t limit = 10) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) out += (i ? ", " : "") + items[i];
  if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
  return out;
}

std::map<std::string, Eigen::Index> index_ids(const io::Table& t, const std::string& source) {
  std::map<std::string, Eigen::Index> idx;
  for (std::size_t r = 0; r < t.row_ids.size(); ++r)
    if (!idx.emplace(t.row_ids[r], static_cast<Eigen::Index>(r)).second)
      fail(ErrorKind::Alignment, source + ": duplicate sample ID '" + t.row_ids[r] + "'");
  return idx;
}

// Rows of `t` reordered to `ids`; every ID must be present.
Eigen::MatrixXd align_rows(const io::Table& t, const std::vector<std::string>& ids,
                           const std::string& source) {
  const auto idx = index_ids(t, source);
  std::vector<std::string> missing;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), t.values.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = idx.find(ids[i]);
    if (it == idx.end()) {
      missing.push_back(ids[i]);
      continue;
    }
    out.row(static_cast<Eigen::Index>(i)) = t.values.row(it->second);
  }
  if (!missing.empty())
    fail(ErrorKind::Alignment, source + ": no row for sample IDs " + join(missing));
  return out;
}

MultiViewDataset assemble(const std::vector<io::Table>& tables,
                          const std::vector<std::string>& names,
                          const std::optional<std::string>& labels_text,
                          const std::string& label_column,
                          const std::optional<std::string>& confounds_text) {
  require(!tables.empty(), ErrorKind::InvalidArgument, "load_views: no view files given");
  const auto& ids = tables.front().row_ids;
  if (ids.empty()) fail(ErrorKind::Alignment, names.front() + ": no samples");
  index_ids(tables.front(), names.front());

  // Every view must cover exactly the same sample IDs.
  const std::set<std::string> reference(ids.begin(), ids.end());
  for (std::size_t m = 1; m < tables.size(); ++m) {
    const std::set<std::string> other(tables[m].row_ids.begin(), tables[m].row_ids.end());
    std::vector<std::string> only_ref, only_other;
    std::set_difference(reference.begin(), reference.end(), other.begin(), other.end(),
                        std::back_inserter(only_ref));
    std::set_difference(other.begin(), other.end(), reference.begin(), reference.end(),
                        std::back_inserter(only_other));
    if (only_ref.size() == reference.size())
      fail(ErrorKind::Alignment,
           "no sample IDs in common between " + names.front() + " and " + names[m]);
    if (!only_ref.empty() || !only_other.empty()) {
      std::string msg = "sample IDs differ between " + names.front() + " and " + names[m];
      if (!only_ref.empty()) msg += "; missing from " + names[m] + ": " + join(only_ref);
      if (!only_other.empty()) msg += "; missing from " + names.front() + ": " + join(only_other);
      fail(ErrorKind::Alignment, msg);
    }
  }

  MultiViewDataset data;
  data.sample_ids = ids;
  for (std::size_t m = 0; m < tables.size(); ++m) {
    data.views.push_back(align_rows(tables[m], ids, names[m]).transpose());
    data.view_names.push_back(names[m]);
    data.feature_names.push_back(tables[m].columns);
  }

  if (labels_text) {
    const auto rows = io::parse_csv(*labels_text, "labels");
    require(rows.front().size() >= 2, ErrorKind::Parse,
            "labels: need an id column and a label column");
    std::size_t col = 1;
    if (!label_column.empty()) {
      const auto& h = rows.front();
      const auto it = std::find(h.begin() + 1, h.end(), label_column);
      if (it == h.end()) fail(ErrorKind::Parse, "labels: no column named '" + label_column + "'");
      col = static_cast<std::size_t>(it - h.begin());
    }
    std::map<std::string, std::string> by_id;
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (!by_id.emplace(rows[r][0], rows[r][col]).second)
        fail(ErrorKind::Alignment, "labels: duplicate sample ID '" + rows[r][0] + "'");
    std::set<std::string> groups;
    std::vector<std::string> missing;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end() || it->second.empty())
        missing.push_back(id);
      else
        groups.insert(it->second);
    }
    if (!missing.empty())
      fail(ErrorKind::Alignment, "labels: no label for sample IDs " + join(missing));
    data.group_names.assign(groups.begin(), groups.end());
    std::vector<int> labels;
    for (const auto& id : ids) {
      const auto& g = by_id.at(id);
      labels.push_back(static_cast<int>(
          std::find(data.group_names.begin(), data.group_names.end(), g) -
          data.group_names.begin()));
    }
    data.labels = std::move(labels);
  }

  if (confounds_text) {
    const io::Table t = io::parse_table(*confounds_text, "confounds");
    data.confounds = align_rows(t, ids, "confounds").transpose();
    data.confound_names = t.columns;
  }
  data.validate();
  return data;
}

}  // namespace

MultiViewDataset load_views(const std::vector<std::filesystem::path>& paths,
                            const LoadOptions& options) {
  std::vector<io::Table> tables;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    tables.push_back(io::read_table(p));
    names.push_back(p.stem().string());
  }
  std::optional<std::string> labels, confounds;
  if (options.labels_path) labels = io::read_file(*options.labels_path);
  if (options.confounds_path) confounds = io::read_file(*options.confounds_path);
  return assemble(tables, names, labels, options.label_column, confounds);
}

MultiViewDataset load_views_from_text(const std::vector<std::string>& texts,
                                      const std::vector<std::string>& names,
                                      const std::optional<std::string>& labels_text,
                                      const std::string& label_column,
                                      const std::optional<std::string>& confounds_text) {
  require(texts.size() == names.size(), ErrorKind::InvalidArgument,
          "load_views: one name per view is required");
  std::vector<io::Table> tables;
  for (std::size_t m = 0; m < texts.size(); ++m)
    tables.push_back(io::parse_table(texts[m], names[m]));
  return assemble(tables, names, labels_text, label_column, confounds_text);
}

namespace {

int feature_index(const MultiViewDataset& data, int view, const std::string& name) {
  require(view >= 0 && view < static_cast<int>(data.num_views()), ErrorKind::InvalidArgument,
          "preprocess: view index out of range");
  const auto& names = data.feature_names[static_cast<std::size_t>(view)];
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end())
    fail(ErrorKind::InvalidArgument, "preprocess: view " + data.view_names[view] +
                                         " has no feature named '" + name + "'");
  return static_cast<int>(it - names.begin());
}

MultiViewDataset apply_drop_samples(const MultiViewDataset& data,
                                    const std::vector<DroppedSample>& dropped) {
  std::set<std::string> drop;
  for (const auto& d : dropped) drop.insert(d.id);
  std::vector<Eigen::Index> keep;
  for (std::size_t n = 0; n < data.num_samples(); ++n)
    if (!drop.count(data.sample_ids[n])) keep.push_back(static_cast<Eigen::Index>(n));
  if (keep.empty()) fail(ErrorKind::Degenerate, "preprocess: every sample was dropped");

  MultiViewDataset out = data;
  out.sample_ids.clear();
  for (auto n : keep) out.sample_ids.push_back(data.sample_ids[static_cast<std::size_t>(n)]);
  for (auto& v : out.views) v = v(Eigen::all, keep).eval();
  if (data.labels) {
    std::vector<int> labels;
    for (auto n : keep) labels.push_back((*data.labels)[static_cast<std::size_t>(n)]);
    out.labels = std::move(labels);
  }
  if (data.confounds) out.confounds = (*data.confounds)(Eigen::all, keep).eval();
  return out;
}

MultiViewDataset apply_drop_features(const MultiViewDataset& data,
                                     const std::vector<DroppedFeature>& dropped) {
  MultiViewDataset out = data;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    std::set<std::string> drop;
    for (const auto& d : dropped)
      if (d.view == static_cast<int>(m)) drop.insert(d.name);
    if (drop.empty()) continue;
    std::vector<Eigen::Index> keep;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < data.feature_names[m].size(); ++j) {
      if (drop.count(data.feature_names[m][j])) continue;
      keep.push_back(static_cast<Eigen::Index>(j));
      names.push_back(data.feature_names[m][j]);
    }
    if (keep.empty())
      fail(ErrorKind::Degenerate,
           "preprocess: view " + data.view_names[m] + " lost all of its features");
    out.views[m] = data.views[m](keep, Eigen::all).eval();
    out.feature_names[m] = std::move(names);
  }
  return out;
}

MultiViewDataset apply_impute(const MultiViewDataset& data,
                              const std::vector<ImputedFeature>& imputed) {
  MultiViewDataset out = data;
  for (const auto& f : imputed) {
    const int j = feature_index(data, f.view, f.name);
    auto row = out.views[static_cast<std::size_t>(f.view)].row(j);
    for (Eigen::Index n = 0; n < row.size(); ++n)
      if (std::isnan(row[n])) row[n] = f.median;
  }
  if (out.has_missing())
    fail(ErrorKind::InvalidArgument, "preprocess: missing values remain after imputation");
  return out;
}

Eigen::MatrixXd design_matrix(const MultiViewDataset& data) {
  const auto N = static_cast<Eigen::Index>(data.num_samples());
  Eigen::MatrixXd A(N, data.confounds->rows() + 1);
  A.col(0).setOnes();
  A.rightCols(data.confounds->rows()) = data.confounds->transpose();
  return A;
}

MultiViewDataset apply_regress(const MultiViewDataset& data,
                               const std::vector<Eigen::MatrixXd>& coefficients) {
  require(data.confounds.has_value(), ErrorKind::InvalidArgument,
          "preprocess: confound regression needs confounds");
  require(coefficients.size() == data.num_views(), ErrorKind::Shape,
          "preprocess: one coefficient matrix per view is required");
  const Eigen::MatrixXd A = design_matrix(data);
  MultiViewDataset out = data;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    require(coefficients[m].rows() == data.views[m].rows() && coefficients[m].cols() == A.cols(),
            ErrorKind::Shape, "preprocess: confound coefficients have the wrong shape");
    out.views[m].noalias() -= coefficients[m] * A.transpose();
  }
  return out;
}

MultiViewDataset apply_standardize(const MultiViewDataset& data,
                                   const std::vector<Eigen::VectorXd>& means,
                                   const std::vector<Eigen::VectorXd>& sds) {
  MultiViewDataset out = data;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    require(means[m].size() == data.views[m].rows() && sds[m].size() == data.views[m].rows(),
            ErrorKind::Shape, "preprocess: standardisation parameters have the wrong shape");
    out.views[m] = ((data.views[m].colwise() - means[m]).array().colwise() / sds[m].array())
                       .matrix();
  }
  return out;
}

}  // namespace

MultiViewDataset drop_high_missing_samples(const MultiViewDataset& data, double threshold,
                                           std::optional<int> view, PreprocessReport& report) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::InvalidArgument,
          "drop_high_missing_samples: threshold must lie in (0, 1]");
  if (view)
    require(*view >= 0 && *view < static_cast<int>(data.num_views()),
            ErrorKind::InvalidArgument, "drop_high_missing_samples: view index out of range");
  std::vector<DroppedSample> dropped;
  for (std::size_t n = 0; n < data.num_samples(); ++n) {
    long missing = 0, total = 0;
    for (std::size_t m = 0; m < data.num_views(); ++m) {
      if (view && static_cast<int>(m) != *view) continue;
      const auto col = data.views[m].col(static_cast<Eigen::Index>(n));
      missing += col.array().isNaN().count();
      total += col.size();
    }
    const double frac = total > 0 ? static_cast<double>(missing) / total : 0.0;
    if (frac > threshold) dropped.push_back({data.sample_ids[n], frac});
  }
  MultiViewDataset out = apply_drop_samples(data, dropped);
  report.steps.push_back("drop_samples");
  report.sample_threshold = threshold;
  report.sample_view = view;
  report.dropped_samples.insert(report.dropped_samples.end(), dropped.begin(), dropped.end());
  return out;
}

MultiViewDataset drop_high_missing(const MultiViewDataset& data, double threshold,
                                   PreprocessReport& report) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::InvalidArgument,
          "drop_high_missing: threshold must lie in (0, 1]");
  std::vector<DroppedFeature> dropped;
  const double N = static_cast<double>(data.num_samples());
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    for (Eigen::Index j = 0; j < data.views[m].rows(); ++j) {
      const double frac = static_cast<double>(data.views[m].row(j).array().isNaN().count()) / N;
      if (frac > threshold)
        dropped.push_back({static_cast<int>(m), data.feature_names[m][static_cast<std::size_t>(j)],
                           frac});
    }
  }
  MultiViewDataset out = apply_drop_features(data, dropped);
  report.steps.push_back("drop_features");
  report.feature_threshold = threshold;
  report.dropped_features.insert(report.dropped_features.end(), dropped.begin(), dropped.end());
  return out;
}

MultiViewDataset median_impute(const MultiViewDataset& data, PreprocessReport& report) {
  std::vector<ImputedFeature> imputed;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    for (Eigen::Index j = 0; j < data.views[m].rows(); ++j) {
      const auto row = data.views[m].row(j);
      std::vector<double> observed;
      for (double v : row)
        if (!std::isnan(v)) observed.push_back(v);
      const int count = static_cast<int>(row.size()) - static_cast<int>(observed.size());
      if (count == 0) continue;
      const std::string& name = data.feature_names[m][static_cast<std::size_t>(j)];
      if (observed.empty())
        fail(ErrorKind::Degenerate, "median_impute: feature " + name + " of view " +
                                        data.view_names[m] + " has no observed values");
      std::sort(observed.begin(), observed.end());
      const std::size_t h = observed.size() / 2;
      const double median = observed.size() % 2 ? observed[h]
                                                : 0.5 * (observed[h - 1] + observed[h]);
      imputed.push_back({static_cast<int>(m), name, median, count});
    }
  }
  MultiViewDataset out = apply_impute(data, imputed);
  report.steps.push_back("impute");
  report.imputed.insert(report.imputed.end(), imputed.begin(), imputed.end());
  return out;
}

MultiViewDataset regress_confounds(const MultiViewDataset& data, PreprocessReport& report) {
  require(data.confounds.has_value(), ErrorKind::InvalidArgument,
          "regress_confounds: the dataset has no confounds");
  require(!data.has_missing(), ErrorKind::InvalidArgument,
          "regress_confounds: impute missing values first");
  require(data.confounds->allFinite(), ErrorKind::InvalidArgument,
          "regress_confounds: confounds contain missing or non-finite values");

  const Eigen::MatrixXd A = design_matrix(data);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < A.cols()) {
    // Columns with weight in a null-space direction take part in a dependency.
    const Eigen::MatrixXd null = Eigen::FullPivLU<Eigen::MatrixXd>(A).kernel();
    std::vector<std::string> dependent;
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
      if (null.row(c).cwiseAbs().maxCoeff() <= 1e-8 * null.cwiseAbs().maxCoeff()) continue;
      dependent.push_back(c == 0 ? "intercept"
                                 : data.confound_names[static_cast<std::size_t>(c - 1)]);
    }
    fail(ErrorKind::Degenerate,
         "regress_confounds: confounds are collinear; dependent columns: " + join(dependent));
  }
  std::vector<Eigen::MatrixXd> coefficients;
  for (const auto& X : data.views) coefficients.push_back(qr.solve(X.transpose()).transpose());
  MultiViewDataset out = apply_regress(data, coefficients);
  report.steps.push_back("regress_confounds");
  report.confound_coefficients = std::move(coefficients);
  report.confound_names = data.confound_names;
  return out;
}

MultiViewDataset standardize(const MultiViewDataset& data, PreprocessReport& report,
                             SdConvention convention) {
  require(!data.has_missing(), ErrorKind::InvalidArgument,
          "standardize: impute missing values first");
  const double N = static_cast<double>(data.num_samples());
  const double denom = convention == SdConvention::Population ? N : N - 1.0;
  require(denom > 0.0, ErrorKind::Degenerate, "standardize: too few samples");
  std::vector<Eigen::VectorXd> means, sds;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    const auto& X = data.views[m];
    const Eigen::VectorXd mean = X.rowwise().mean();
    const Eigen::VectorXd sd =
        ((X.colwise() - mean).rowwise().squaredNorm() / denom).cwiseSqrt();
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
      const double scale = std::max(1.0, X.row(j).cwiseAbs().maxCoeff());
      if (!(sd[j] > 1e-12 * scale))
        fail(ErrorKind::Degenerate, "standardize: feature " +
                                        data.feature_names[m][static_cast<std::size_t>(j)] +
                                        " of view " + data.view_names[m] + " has zero variance");
    }
    means.push_back(mean);
    sds.push_back(sd);
  }
  MultiViewDataset out = apply_standardize(data, means, sds);
  report.steps.push_back("standardize");
  report.sd_convention = convention;
  report.means = std::move(means);
  report.sds = std::move(sds);
  return out;
}

MultiViewDataset preprocess(const MultiViewDataset& data, const PreprocessOptions& options,
                            PreprocessReport& report) {
  data.validate();
  MultiViewDataset out = data;
  if (options.sample_threshold)
    out = drop_high_missing_samples(out, *options.sample_threshold, options.sample_view, report);
  out = drop_high_missing(out, options.feature_threshold, report);
  if (options.impute) out = median_impute(out, report);
  if (options.regress && out.confounds) out = regress_confounds(out, report);
  if (options.standardize) out = standardize(out, report, options.sd_convention);
  return out;
}

MultiViewDataset replay(const MultiViewDataset& raw, const PreprocessReport& report) {
  raw.validate();
  MultiViewDataset out = raw;
  for (const auto& step : report.steps) {
    if (step == "drop_samples")
      out = apply_drop_samples(out, report.dropped_samples);
    else if (step == "drop_features")
      out = apply_drop_features(out, report.dropped_features);
    else if (step == "impute")
      out = apply_impute(out, report.imputed);
    else if (step == "regress_confounds")
      out = apply_regress(out, report.confound_coefficients);
    else if (step == "standardize")
      out = apply_standardize(out, report.means, report.sds);
    else
      fail(ErrorKind::Parse, "replay: unknown preprocessing step '" + step + "'");
  }
  return out;
}

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string PreprocessReport::to_json() const {
  json j;
  j["steps"] = steps;
  if (sample_threshold) j["sample_threshold"] = *sample_threshold;
  if (sample_view) j["sample_view"] = *sample_view;
  j["dropped_samples"] = json::array();
  for (const auto& d : dropped_samples)
    j["dropped_samples"].push_back({{"id", d.id}, {"missing_fraction", d.missing_fraction}});
  if (feature_threshold) j["feature_threshold"] = *feature_threshold;
  j["dropped_features"] = json::array();
  for (const auto& d : dropped_features)
    j["dropped_features"].push_back(
        {{"view", d.view}, {"name", d.name}, {"missing_fraction", d.missing_fraction}});
  j["imputed"] = json::array();
  for (const auto& f : imputed)
    j["imputed"].push_back(
        {{"view", f.view}, {"name", f.name}, {"median", f.median}, {"count", f.count}});
  j["confound_names"] = confound_names;
  j["confound_coefficients"] = json::array();
  for (const auto& B : confound_coefficients) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < B.rows(); ++r) rows.push_back(vec_json(B.row(r).transpose()));
    j["confound_coefficients"].push_back(std::move(rows));
  }
  j["sd_convention"] = sd_convention == SdConvention::Population ? "population" : "sample";
  j["means"] = json::array();
  for (const auto& v : means) j["means"].push_back(vec_json(v));
  j["sds"] = json::array();
  for (const auto& v : sds) j["sds"].push_back(vec_json(v));
  return j.dump(1);
}

PreprocessReport PreprocessReport::from_json(const std::string& text) {
  PreprocessReport r;
  try {
    const json j = json::parse(text);
    r.steps = j.at("steps").get<std::vector<std::string>>();
    if (j.contains("sample_threshold")) r.sample_threshold = j["sample_threshold"].get<double>();
    if (j.contains("sample_view")) r.sample_view = j["sample_view"].get<int>();
    for (const auto& d : j.at("dropped_samples"))
      r.dropped_samples.push_back({d.at("id"), d.at("missing_fraction")});
    if (j.contains("feature_threshold"))
      r.feature_threshold = j["feature_threshold"].get<double>();
    for (const auto& d : j.at("dropped_features"))
      r.dropped_features.push_back({d.at("view"), d.at("name"), d.at("missing_fraction")});
    for (const auto& f : j.at("imputed"))
      r.imputed.push_back({f.at("view"), f.at("name"), f.at("median"), f.at("count")});
    r.confound_names = j.at("confound_names").get<std::vector<std::string>>();
    for (const auto& B : j.at("confound_coefficients")) {
      Eigen::MatrixXd M(static_cast<Eigen::Index>(B.size()),
                        B.empty() ? 0 : static_cast<Eigen::Index>(B[0].size()));
      for (Eigen::Index row = 0; row < M.rows(); ++row) M.row(row) = vec_from(B[row]).transpose();
      r.confound_coefficients.push_back(std::move(M));
    }
    r.sd_convention = j.at("sd_convention") == "sample" ? SdConvention::Sample
                                                        : SdConvention::Population;
    for (const auto& v : j.at("means")) r.means.push_back(vec_from(v));
    for (const auto& v : j.at("sds")) r.sds.push_back(vec_from(v));
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("preprocess report: ") + e.what());
  }
  return r;
}

}  // namespace sgfa
