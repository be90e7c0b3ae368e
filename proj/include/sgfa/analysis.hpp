#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sgfa/model.hpp"
#include "sgfa/sampler.hpp"
#include "sgfa/synthgen.hpp"

namespace sgfa {

/// Posterior means of W (sum D_m x K) and Z (K x N) for every chain.
struct ChainFactorSummary {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::MatrixXd> Z;
  std::vector<int> view_dims;

  int num_chains() const { return static_cast<int>(W.size()); }
};

ChainFactorSummary summarize_chains(const PosteriorDraws& draws, const ParamLayout& layout);

struct PairwiseTest {
  int group_a = 0;
  int group_b = 0;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

struct SubgroupTests {
  double F = 0.0;
  double df_between = 0.0;
  double df_within = 0.0;
  double p = 1.0;
  bool welch = false;
  std::vector<PairwiseTest> pairwise;
};

/// One-way ANOVA across subgroups plus a two-sample t-test for every pair
/// (pooled variance, or Welch when requested).
SubgroupTests subgroup_tests(const Eigen::VectorXd& values, const std::vector<int>& labels,
                             int num_groups, bool welch = false);

/// Per-subgroup mean |z|, normalised to sum to one.
std::vector<double> factor_contributions(const Eigen::VectorXd& z_row,
                                         const std::vector<int>& labels, int num_groups);

struct CovarianceExplained {
  /// |w_k z_k|_F^2 / |X|_F^2 per factor, in factor order.
  std::vector<double> fraction;
  /// Factor indices sorted by decreasing fraction.
  std::vector<int> ranking;
  double total = 0.0;
};

CovarianceExplained covariance_explained(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z,
                                         const Eigen::MatrixXd& X);

/// Rank-one reconstruction w_k z_k of factor k.
Eigen::MatrixXd project_to_data(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z, int k);

struct RobustFactor {
  Eigen::VectorXd loading;  // stacked over views, sign-aligned chain average
  Eigen::VectorXd latent;   // N
  int support = 0;
  /// Per chain: matched factor index (-1 if none), sign used, aligned |cos|.
  std::vector<int> chain_factor;
  std::vector<int> chain_sign;
  std::vector<double> chain_similarity;
  double covariance_explained = 0.0;
  std::vector<double> contributions;
  std::optional<SubgroupTests> tests;
  std::string tests_error;
};

struct RobustFactorSet {
  std::vector<RobustFactor> factors;
  std::vector<int> view_dims;
  int num_chains = 0;
  double threshold = 0.8;
  /// Candidate clusters formed across chains, robust or not.
  int clusters = 0;
  std::string assignment_method;

  int size() const { return static_cast<int>(factors.size()); }
  bool empty() const { return factors.empty(); }
  Eigen::MatrixXd W() const;  // sum D_m x size()
  Eigen::MatrixXd Z() const;  // size() x N
};

/// Cross-chain matching of factors by |cosine| of stacked loadings.
///
/// Chain 0 seeds one cluster per non-zero factor. Every other chain is
/// assigned greedily, best pair first, one factor per cluster; its unmatched
/// factors seed new clusters. Clusters found in more than half of the chains
/// are kept and averaged after sign alignment. Output factors carry a
/// canonical sign (largest-magnitude loading positive) and are ordered by
/// decreasing |w|^2 |z|^2.
RobustFactorSet match_factors(const ChainFactorSummary& summary, double threshold = 0.8);

/// Fills covariance explained against the stacked data X and, when labels
/// are given, subgroup contributions and tests.
void annotate(RobustFactorSet& set, const Eigen::MatrixXd& X,
              const std::optional<std::vector<int>>& labels, int num_groups, bool welch = false);

struct FactorMatch {
  int true_factor = 0;
  int robust_factor = -1;  // -1 when unmatched
  double similarity = 0.0; // aligned |cos| of the assigned pair (0 when none)
  double contribution_error = 0.0;
};

struct RecoveryReport {
  std::vector<FactorMatch> matches;  // one per true factor
  int unmatched_true = 0;
  int spurious = 0;
  double max_contribution_error = 0.0;
  double threshold = 0.8;
  Eigen::MatrixXd true_contributions;
  Eigen::MatrixXd robust_contributions;  // rows follow the robust set order
};

/// Optimal one-to-one assignment of robust to true factors maximising the
/// summed |cos|; pairs below `threshold` count as unmatched.
RecoveryReport recovery_score(const RobustFactorSet& robust, const GroundTruth& truth,
                              double threshold = 0.8);

std::string to_json(const RobustFactorSet& set, const std::vector<std::string>& group_names);
std::string to_json(const RecoveryReport& report);

}  // namespace sgfa
