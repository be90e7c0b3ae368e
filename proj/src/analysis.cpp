#include "sgfa/analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "sgfa/error.hpp"
#include "sgfa/stats.hpp"

namespace sgfa {

using nlohmann::json;

ChainFactorSummary summarize_chains(const PosteriorDraws& draws, const ParamLayout& layout) {
  require(!draws.chains.empty(), ErrorKind::InvalidArgument, "summarize_chains: no chains");
  require(draws.dimension() == layout.size(), ErrorKind::Shape,
          "summarize_chains: draws do not match the parameter layout");
  const Slice sW = layout.slice(Block::W), sZ = layout.slice(Block::Z);
  const int D = layout.total_features(), K = layout.num_factors(), N = layout.num_samples();

  ChainFactorSummary s;
  s.view_dims = layout.view_dims();
  for (const auto& chain : draws.chains) {
    require(chain.draws.rows() >= 1, ErrorKind::InvalidArgument,
            "summarize_chains: a chain has no retained draws");
    const Eigen::VectorXd mean = chain.draws.colwise().mean().transpose();
    s.W.push_back(Eigen::Map<const Eigen::MatrixXd>(mean.data() + sW.offset, D, K));
    s.Z.push_back(Eigen::Map<const Eigen::MatrixXd>(mean.data() + sZ.offset, K, N));
  }
  return s;
}

namespace {

struct GroupStats {
  int n = 0;
  double mean = 0.0;
  double ss = 0.0;  // sum of squared deviations from the group mean
};

std::vector<GroupStats> group_stats(const Eigen::VectorXd& values, const std::vector<int>& labels,
                                    int num_groups) {
  require(static_cast<Eigen::Index>(labels.size()) == values.size(), ErrorKind::Shape,
          "subgroup_tests: one label per value is required");
  std::vector<GroupStats> g(static_cast<std::size_t>(num_groups));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_groups, ErrorKind::InvalidArgument,
            "subgroup_tests: label out of range");
    auto& s = g[static_cast<std::size_t>(labels[i])];
    ++s.n;
    s.mean += values[static_cast<Eigen::Index>(i)];
  }
  for (auto& s : g) {
    require(s.n >= 2, ErrorKind::InvalidArgument,
            "subgroup_tests: every subgroup needs at least two samples");
    s.mean /= s.n;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& s = g[static_cast<std::size_t>(labels[i])];
    const double d = values[static_cast<Eigen::Index>(i)] - s.mean;
    s.ss += d * d;
  }
  return g;
}

double two_sided_t_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

SubgroupTests subgroup_tests(const Eigen::VectorXd& values, const std::vector<int>& labels,
                             int num_groups, bool welch) {
  require(num_groups >= 2, ErrorKind::InvalidArgument,
          "subgroup_tests: need at least two subgroups");
  require(values.allFinite(), ErrorKind::InvalidArgument, "subgroup_tests: non-finite values");
  const auto g = group_stats(values, labels, num_groups);

  SubgroupTests out;
  out.welch = welch;
  const double N = static_cast<double>(values.size());
  const double grand = values.mean();
  double ssb = 0.0, ssw = 0.0;
  for (const auto& s : g) {
    ssb += s.n * (s.mean - grand) * (s.mean - grand);
    ssw += s.ss;
  }
  if (!(ssw > 0.0))
    fail(ErrorKind::Degenerate, "subgroup_tests: zero within-group variance");
  out.df_between = num_groups - 1.0;
  out.df_within = N - num_groups;
  out.F = (ssb / out.df_between) / (ssw / out.df_within);
  const boost::math::fisher_f fdist(out.df_between, out.df_within);
  out.p = boost::math::cdf(boost::math::complement(fdist, out.F));

  for (int a = 0; a < num_groups; ++a) {
    for (int b = a + 1; b < num_groups; ++b) {
      const auto& A = g[static_cast<std::size_t>(a)];
      const auto& B = g[static_cast<std::size_t>(b)];
      PairwiseTest pt;
      pt.group_a = a;
      pt.group_b = b;
      const double va = A.ss / (A.n - 1.0), vb = B.ss / (B.n - 1.0);
      if (welch) {
        const double qa = va / A.n, qb = vb / B.n;
        if (!(qa + qb > 0.0))
          fail(ErrorKind::Degenerate, "subgroup_tests: zero variance in a group pair");
        pt.t = (A.mean - B.mean) / std::sqrt(qa + qb);
        pt.df = (qa + qb) * (qa + qb) / (qa * qa / (A.n - 1.0) + qb * qb / (B.n - 1.0));
      } else {
        pt.df = A.n + B.n - 2.0;
        const double sp2 = (A.ss + B.ss) / pt.df;
        if (!(sp2 > 0.0))
          fail(ErrorKind::Degenerate, "subgroup_tests: zero pooled variance in a group pair");
        pt.t = (A.mean - B.mean) / std::sqrt(sp2 * (1.0 / A.n + 1.0 / B.n));
      }
      pt.p = two_sided_t_p(pt.t, pt.df);
      out.pairwise.push_back(pt);
    }
  }
  return out;
}

std::vector<double> factor_contributions(const Eigen::VectorXd& z_row,
                                         const std::vector<int>& labels, int num_groups) {
  require(static_cast<Eigen::Index>(labels.size()) == z_row.size(), ErrorKind::Shape,
          "factor_contributions: one label per sample is required");
  const Eigen::VectorXd a = z_row.cwiseAbs();
  return stats::normalized_group_means(std::span<const double>(a.data(), a.size()), labels,
                                       num_groups);
}

CovarianceExplained covariance_explained(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z,
                                         const Eigen::MatrixXd& X) {
  require(W.cols() == Z.rows() && W.rows() == X.rows() && Z.cols() == X.cols(),
          ErrorKind::Shape, "covariance_explained: inconsistent shapes");
  const double total = X.squaredNorm();
  require(total > 0.0, ErrorKind::InvalidArgument, "covariance_explained: data has zero norm");
  CovarianceExplained out;
  for (Eigen::Index k = 0; k < W.cols(); ++k)
    out.fraction.push_back(W.col(k).squaredNorm() * Z.row(k).squaredNorm() / total);
  out.ranking.resize(out.fraction.size());
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](int a, int b) { return out.fraction[a] > out.fraction[b]; });
  out.total = std::accumulate(out.fraction.begin(), out.fraction.end(), 0.0);
  return out;
}

Eigen::MatrixXd project_to_data(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z, int k) {
  require(W.cols() == Z.rows(), ErrorKind::Shape, "project_to_data: inconsistent shapes");
  require(k >= 0 && k < W.cols(), ErrorKind::InvalidArgument,
          "project_to_data: factor index out of range");
  return W.col(k) * Z.row(k);
}

Eigen::MatrixXd RobustFactorSet::W() const {
  const int D = std::accumulate(view_dims.begin(), view_dims.end(), 0);
  Eigen::MatrixXd out(D, size());
  for (int k = 0; k < size(); ++k) out.col(k) = factors[k].loading;
  return out;
}

Eigen::MatrixXd RobustFactorSet::Z() const {
  const Eigen::Index N = factors.empty() ? 0 : factors.front().latent.size();
  Eigen::MatrixXd out(size(), N);
  for (int k = 0; k < size(); ++k) out.row(k) = factors[k].latent.transpose();
  return out;
}

namespace {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return stats::cosine_similarity(std::span<const double>(a.data(), a.size()),
                                  std::span<const double>(b.data(), b.size()));
}

struct Cluster {
  Eigen::VectorXd reference;
  std::vector<int> factor;  // per chain, -1 when absent
  std::vector<int> sign;
  std::vector<double> similarity;
};

}  // namespace

RobustFactorSet match_factors(const ChainFactorSummary& summary, double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::InvalidArgument,
          "match_factors: threshold must lie in (0, 1]");
  const int C = summary.num_chains();
  require(C >= 1 && static_cast<int>(summary.Z.size()) == C, ErrorKind::InvalidArgument,
          "match_factors: need at least one chain summary");

  std::vector<Cluster> clusters;
  auto seed = [&](int c, int k) {
    Cluster cl;
    cl.reference = summary.W[c].col(k);
    cl.factor.assign(C, -1);
    cl.sign.assign(C, 0);
    cl.similarity.assign(C, 0.0);
    cl.factor[c] = k;
    cl.sign[c] = 1;
    cl.similarity[c] = 1.0;
    clusters.push_back(std::move(cl));
  };

  for (int c = 0; c < C; ++c) {
    const Eigen::MatrixXd& W = summary.W[c];
    std::vector<int> live;
    for (int k = 0; k < W.cols(); ++k)
      if (W.col(k).squaredNorm() > 0.0) live.push_back(k);
    if (c == 0) {
      for (int k : live) seed(0, k);
      continue;
    }
    // Greedy one-to-one assignment against the existing clusters, best pair first.
    struct Pair {
      double sim;
      double signed_sim;
      int cluster;
      int factor;
    };
    std::vector<Pair> pairs;
    for (int q = 0; q < static_cast<int>(clusters.size()); ++q)
      for (int k : live) {
        const double s = cosine(clusters[q].reference, W.col(k));
        if (std::abs(s) >= threshold) pairs.push_back({std::abs(s), s, q, k});
      }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      if (a.cluster != b.cluster) return a.cluster < b.cluster;
      return a.factor < b.factor;
    });
    std::vector<bool> cluster_used(clusters.size(), false), factor_used(W.cols(), false);
    for (const auto& p : pairs) {
      if (cluster_used[p.cluster] || factor_used[p.factor]) continue;
      cluster_used[p.cluster] = true;
      factor_used[p.factor] = true;
      auto& cl = clusters[static_cast<std::size_t>(p.cluster)];
      cl.factor[c] = p.factor;
      cl.sign[c] = p.signed_sim < 0.0 ? -1 : 1;
      cl.similarity[c] = p.sim;
    }
    for (int k : live)
      if (!factor_used[k]) seed(c, k);
  }

  RobustFactorSet out;
  out.view_dims = summary.view_dims;
  out.num_chains = C;
  out.threshold = threshold;
  out.clusters = static_cast<int>(clusters.size());
  out.assignment_method =
      "greedy one-to-one by aligned |cosine| of stacked loadings; reference chain 0; "
      "unmatched factors seed new clusters";

  for (const auto& cl : clusters) {
    RobustFactor f;
    f.support = static_cast<int>(std::count_if(cl.factor.begin(), cl.factor.end(),
                                               [](int k) { return k >= 0; }));
    if (2 * f.support <= C) continue;
    f.chain_factor = cl.factor;
    f.chain_sign = cl.sign;
    f.chain_similarity = cl.similarity;
    f.loading = Eigen::VectorXd::Zero(summary.W[0].rows());
    f.latent = Eigen::VectorXd::Zero(summary.Z[0].cols());
    for (int c = 0; c < C; ++c) {
      if (cl.factor[c] < 0) continue;
      f.loading += cl.sign[c] * summary.W[c].col(cl.factor[c]);
      f.latent += cl.sign[c] * summary.Z[c].row(cl.factor[c]).transpose();
    }
    f.loading /= f.support;
    f.latent /= f.support;
    Eigen::Index arg = 0;
    f.loading.cwiseAbs().maxCoeff(&arg);
    if (f.loading[arg] < 0.0) {
      f.loading = -f.loading;
      f.latent = -f.latent;
      for (auto& s : f.chain_sign) s = -s;
    }
    out.factors.push_back(std::move(f));
  }
  std::stable_sort(out.factors.begin(), out.factors.end(),
                   [](const RobustFactor& a, const RobustFactor& b) {
                     return a.loading.squaredNorm() * a.latent.squaredNorm() >
                            b.loading.squaredNorm() * b.latent.squaredNorm();
                   });
  return out;
}

void annotate(RobustFactorSet& set, const Eigen::MatrixXd& X,
              const std::optional<std::vector<int>>& labels, int num_groups, bool welch) {
  if (set.empty()) return;
  const CovarianceExplained ce = covariance_explained(set.W(), set.Z(), X);
  for (int k = 0; k < set.size(); ++k) {
    auto& f = set.factors[k];
    f.covariance_explained = ce.fraction[k];
    if (!labels) continue;
    try {
      f.contributions = factor_contributions(f.latent, *labels, num_groups);
    } catch (const Error& e) {
      f.contributions.clear();
      f.tests_error = e.what();
      continue;
    }
    try {
      f.tests = subgroup_tests(f.latent.cwiseAbs(), *labels, num_groups, welch);
    } catch (const Error& e) {
      f.tests.reset();
      f.tests_error = e.what();
    }
  }
}

RecoveryReport recovery_score(const RobustFactorSet& robust, const GroundTruth& truth,
                              double threshold) {
  const int Kt = truth.num_factors();
  const int Kr = robust.size();
  require(Kt <= 20, ErrorKind::InvalidArgument, "recovery_score: at most 20 true factors");
  RecoveryReport rep;
  rep.threshold = threshold;
  rep.true_contributions = true_contributions(truth);

  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(Kr, Kt);
  for (int r = 0; r < Kr; ++r) {
    require(robust.factors[r].loading.size() == truth.W.rows(), ErrorKind::Shape,
            "recovery_score: loading dimension does not match the ground truth");
    for (int t = 0; t < Kt; ++t)
      if (robust.factors[r].loading.squaredNorm() > 0.0 && truth.W.col(t).squaredNorm() > 0.0)
        sim(r, t) = std::abs(cosine(robust.factors[r].loading, truth.W.col(t)));
  }

  // Exact assignment by dynamic programming over subsets of true factors;
  // robust factors are processed in order and may stay unassigned.
  const std::size_t S = std::size_t{1} << Kt;
  const double neg = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(static_cast<std::size_t>(Kr) + 1,
                                        std::vector<double>(S, neg));
  std::vector<std::vector<int>> choice(static_cast<std::size_t>(Kr) + 1,
                                       std::vector<int>(S, -1));
  best[0][0] = 0.0;
  for (int r = 0; r < Kr; ++r) {
    for (std::size_t mask = 0; mask < S; ++mask) {
      const double cur = best[r][mask];
      if (cur == neg) continue;
      if (cur > best[r + 1][mask]) {
        best[r + 1][mask] = cur;
        choice[r + 1][mask] = -1;
      }
      for (int t = 0; t < Kt; ++t) {
        if (mask & (std::size_t{1} << t)) continue;
        const std::size_t next = mask | (std::size_t{1} << t);
        const double v = cur + sim(r, t);
        if (v > best[r + 1][next]) {
          best[r + 1][next] = v;
          choice[r + 1][next] = t;
        }
      }
    }
  }
  std::size_t mask = 0;
  for (std::size_t m = 0; m < S; ++m)
    if (best[Kr][m] > best[Kr][mask]) mask = m;
  std::vector<int> assigned(static_cast<std::size_t>(Kt), -1);
  for (int r = Kr; r > 0; --r) {
    const int t = choice[r][mask];
    if (t >= 0) {
      assigned[static_cast<std::size_t>(t)] = r - 1;
      mask &= ~(std::size_t{1} << t);
    }
  }

  rep.robust_contributions = Eigen::MatrixXd::Zero(Kr, truth.num_groups);
  for (int r = 0; r < Kr; ++r) {
    const auto c = factor_contributions(robust.factors[r].latent, truth.labels, truth.num_groups);
    for (int g = 0; g < truth.num_groups; ++g) rep.robust_contributions(r, g) = c[g];
  }

  std::vector<bool> robust_used(static_cast<std::size_t>(Kr), false);
  for (int t = 0; t < Kt; ++t) {
    FactorMatch m;
    m.true_factor = t;
    const int r = assigned[static_cast<std::size_t>(t)];
    if (r >= 0 && sim(r, t) >= threshold) {
      m.robust_factor = r;
      m.similarity = sim(r, t);
      m.contribution_error =
          (rep.robust_contributions.row(r) - rep.true_contributions.row(t)).cwiseAbs().maxCoeff();
      rep.max_contribution_error = std::max(rep.max_contribution_error, m.contribution_error);
      robust_used[static_cast<std::size_t>(r)] = true;
    } else {
      m.similarity = r >= 0 ? sim(r, t) : 0.0;
      ++rep.unmatched_true;
    }
    rep.matches.push_back(m);
  }
  rep.spurious = static_cast<int>(std::count(robust_used.begin(), robust_used.end(), false));
  return rep;
}

namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

json mat(const Eigen::MatrixXd& A) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < A.rows(); ++r) rows.push_back(vec(A.row(r).transpose()));
  return rows;
}

}  // namespace

std::string to_json(const RobustFactorSet& set, const std::vector<std::string>& group_names) {
  json j;
  j["num_chains"] = set.num_chains;
  j["threshold"] = set.threshold;
  j["clusters"] = set.clusters;
  j["assignment_method"] = set.assignment_method;
  j["view_dims"] = set.view_dims;
  j["group_names"] = group_names;
  j["num_robust"] = set.size();
  j["factors"] = json::array();
  for (int k = 0; k < set.size(); ++k) {
    const auto& f = set.factors[k];
    json o;
    o["index"] = k;
    o["support"] = f.support;
    o["chain_factor"] = f.chain_factor;
    o["chain_sign"] = f.chain_sign;
    o["chain_similarity"] = f.chain_similarity;
    o["covariance_explained"] = f.covariance_explained;
    o["contributions"] = f.contributions;
    if (f.tests) {
      json t;
      t["F"] = f.tests->F;
      t["df_between"] = f.tests->df_between;
      t["df_within"] = f.tests->df_within;
      t["p"] = f.tests->p;
      t["welch"] = f.tests->welch;
      t["pairwise"] = json::array();
      for (const auto& pt : f.tests->pairwise)
        t["pairwise"].push_back(
            {{"a", pt.group_a}, {"b", pt.group_b}, {"t", pt.t}, {"df", pt.df}, {"p", pt.p}});
      o["tests"] = std::move(t);
    }
    if (!f.tests_error.empty()) o["tests_error"] = f.tests_error;
    o["abs_latent"] = vec(f.latent.cwiseAbs());
    j["factors"].push_back(std::move(o));
  }
  return j.dump(1);
}

std::string to_json(const RecoveryReport& r) {
  json j;
  j["threshold"] = r.threshold;
  j["unmatched_true"] = r.unmatched_true;
  j["spurious"] = r.spurious;
  j["max_contribution_error"] = r.max_contribution_error;
  j["matches"] = json::array();
  for (const auto& m : r.matches)
    j["matches"].push_back({{"true_factor", m.true_factor},
                            {"robust_factor", m.robust_factor},
                            {"similarity", m.similarity},
                            {"contribution_error", m.contribution_error}});
  j["true_contributions"] = mat(r.true_contributions);
  j["robust_contributions"] = mat(r.robust_contributions);
  return j.dump(1);
}

}  // namespace sgfa
