#include "sgfa/synthgen.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>

#include "sgfa/error.hpp"
#include "sgfa/model.hpp"
#include "sgfa/stats.hpp"

namespace sgfa {

using nlohmann::json;

int SyntheticScenario::num_samples() const {
  return std::accumulate(group_sizes.begin(), group_sizes.end(), 0);
}

void SyntheticScenario::validate() const {
  require(num_factors >= 1, ErrorKind::Config, "scenario: num_factors must be >= 1");
  require(!group_sizes.empty(), ErrorKind::Config, "scenario: need at least one subgroup");
  for (int g : group_sizes)
    require(g >= 1, ErrorKind::Config, "scenario: subgroup sizes must be >= 1");
  require(!view_dims.empty(), ErrorKind::Config, "scenario: need at least one view");
  for (int d : view_dims)
    require(d >= 2, ErrorKind::Config, "scenario: view dimensions must be >= 2");
  require(noise_sd.size() == view_dims.size(), ErrorKind::Config,
          "scenario: noise_sd needs one entry per view");
  for (double sd : noise_sd)
    require(std::isfinite(sd) && sd > 0.0, ErrorKind::Config, "scenario: noise_sd must be > 0");
  for (double v : {lambda_active, lambda_inactive_w, lambda_inactive_z, tau_z, nu, s})
    require(std::isfinite(v) && v > 0.0, ErrorKind::Config,
            "scenario: shrinkage settings must be positive");
}

Eigen::MatrixXd GroundTruth::view_loadings(int m) const {
  require(m >= 0 && m < static_cast<int>(view_dims.size()), ErrorKind::InvalidArgument,
          "view index out of range");
  const int off = std::accumulate(view_dims.begin(), view_dims.begin() + m, 0);
  return W.middleRows(off, view_dims[m]);
}

SyntheticData generate(const SyntheticScenario& sc) {
  sc.validate();
  const int K = sc.num_factors;
  const int M = static_cast<int>(sc.view_dims.size());
  const int N = sc.num_samples();
  const int G = static_cast<int>(sc.group_sizes.size());

  ModelSpec spec;
  spec.family = ModelFamily::SparseGfaRhs;
  spec.view_dims = sc.view_dims;
  spec.num_samples = N;
  spec.num_factors = K;
  spec.hyper.nu = sc.nu;
  spec.hyper.s = sc.s;
  const int D = spec.total_features();

  std::vector<int> labels;
  for (int g = 0; g < G; ++g) labels.insert(labels.end(), sc.group_sizes[g], g);

  Eigen::MatrixXi feature_mask = Eigen::MatrixXi::Zero(D, K);
  for (int m = 0, off = 0; m < M; off += sc.view_dims[m], ++m) {
    const int block = (sc.view_dims[m] + K - 1) / K;
    for (int k = 0; k < K; ++k)
      for (int j = k * block; j < std::min((k + 1) * block, sc.view_dims[m]); ++j)
        feature_mask(off + j, k) = 1;
  }
  Eigen::MatrixXi sample_mask = Eigen::MatrixXi::Zero(K, N);
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n)
      sample_mask(k, n) = (k == K - 1 || k >= G || labels[n] == k) ? 1 : 0;

  ForwardOverrides fixed;
  fixed.lambda_w = feature_mask.cast<double>().unaryExpr([&](double a) {
    return a > 0 ? sc.lambda_active : sc.lambda_inactive_w;
  });
  fixed.lambda_z = sample_mask.cast<double>().unaryExpr([&](double a) {
    return a > 0 ? sc.lambda_active : sc.lambda_inactive_z;
  });
  fixed.tau_z = Eigen::VectorXd::Constant(K, sc.tau_z);
  Eigen::VectorXd rho(M), tau_w(M);
  for (int m = 0; m < M; ++m) {
    rho[m] = 1.0 / (sc.noise_sd[m] * sc.noise_sd[m]);
    tau_w[m] = tau0(spec.p0(m), sc.view_dims[m], N, rho[m]);
  }
  fixed.rho = rho;
  fixed.tau_w = tau_w;

  ForwardSample draw = forward_sample(spec, fixed, sc.seed);

  SyntheticData out;
  out.data = std::move(draw.data);
  out.data.labels = labels;
  for (int g = 0; g < G; ++g) out.data.group_names.push_back("subgroup" + std::to_string(g + 1));
  out.truth.W = draw.params.W();
  out.truth.Z = draw.params.Z();
  out.truth.view_dims = sc.view_dims;
  out.truth.labels = std::move(labels);
  out.truth.num_groups = G;
  out.truth.feature_mask = std::move(feature_mask);
  out.truth.sample_mask = std::move(sample_mask);
  out.truth.noise_sd = sc.noise_sd;
  out.truth.seed = sc.seed;
  return out;
}

Eigen::MatrixXd true_contributions(const GroundTruth& truth) {
  const int K = truth.num_factors();
  Eigen::MatrixXd out(K, truth.num_groups);
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd absz = truth.Z.row(k).cwiseAbs().transpose();
    const auto row = stats::normalized_group_means(
        std::span<const double>(absz.data(), absz.size()), truth.labels, truth.num_groups);
    for (int g = 0; g < truth.num_groups; ++g) out(k, g) = row[g];
  }
  return out;
}

namespace {

template <typename Derived>
json matrix_to_json(const Eigen::MatrixBase<Derived>& A) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix_from_json(const json& j,
                                                                       const char* what) {
  if (!j.is_array()) fail(ErrorKind::Parse, std::string("ground truth: ") + what + " is not a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> A(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols)
      fail(ErrorKind::Parse, std::string("ground truth: ") + what + " is ragged");
    for (Eigen::Index c = 0; c < cols; ++c) A(r, c) = j[r][c].get<Scalar>();
  }
  return A;
}

}  // namespace

std::string ground_truth_to_json(const GroundTruth& t) {
  json j;
  j["seed"] = t.seed;
  j["view_dims"] = t.view_dims;
  j["num_groups"] = t.num_groups;
  j["labels"] = t.labels;
  j["noise_sd"] = t.noise_sd;
  j["W"] = matrix_to_json(t.W);
  j["Z"] = matrix_to_json(t.Z);
  j["feature_mask"] = matrix_to_json(t.feature_mask);
  j["sample_mask"] = matrix_to_json(t.sample_mask);
  return j.dump(1);
}

GroundTruth ground_truth_from_json(const std::string& text) {
  GroundTruth t;
  try {
    const json j = json::parse(text);
    t.seed = j.at("seed").get<std::uint64_t>();
    t.view_dims = j.at("view_dims").get<std::vector<int>>();
    t.num_groups = j.at("num_groups").get<int>();
    t.labels = j.at("labels").get<std::vector<int>>();
    t.noise_sd = j.at("noise_sd").get<std::vector<double>>();
    t.W = matrix_from_json<double>(j.at("W"), "W");
    t.Z = matrix_from_json<double>(j.at("Z"), "Z");
    t.feature_mask = matrix_from_json<int>(j.at("feature_mask"), "feature_mask");
    t.sample_mask = matrix_from_json<int>(j.at("sample_mask"), "sample_mask");
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("ground truth: ") + e.what());
  }
  const int D = std::accumulate(t.view_dims.begin(), t.view_dims.end(), 0);
  require(t.W.rows() == D && t.Z.rows() == t.W.cols() &&
              t.Z.cols() == static_cast<Eigen::Index>(t.labels.size()),
          ErrorKind::Parse, "ground truth: inconsistent shapes");
  return t;
}

}  // namespace sgfa
