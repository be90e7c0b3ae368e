#pragma once

// Constructed chain summaries for the robust-factor logic.

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "sgfa/analysis.hpp"

namespace fixtures {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Loadings with disjoint supports, so every pair of factors is orthogonal.
inline Eigen::MatrixXd block_loadings(int D, int K, std::mt19937_64& rng) {
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(D, K);
  std::normal_distribution<double> n(0.0, 1.0);
  const int block = D / K;
  for (int k = 0; k < K; ++k)
    for (int d = k * block; d < (k + 1) * block; ++d) W(d, k) = 2.0 + std::abs(n(rng));
  return W;
}

/// Applies a factor permutation and per-factor signs to one chain.
inline void permute_and_flip(sgfa::ChainFactorSummary& s, int chain, const std::vector<int>& perm,
                             const std::vector<int>& sign) {
  const auto c = static_cast<std::size_t>(chain);
  const Eigen::MatrixXd W = s.W[c], Z = s.Z[c];
  for (std::size_t k = 0; k < perm.size(); ++k) {
    s.W[c].col(perm[k]) = sign[k] * W.col(static_cast<Eigen::Index>(k));
    s.Z[c].row(perm[k]) = sign[k] * Z.row(static_cast<Eigen::Index>(k));
  }
}

inline std::vector<int> random_perm(int K, std::mt19937_64& rng) {
  std::vector<int> p(static_cast<std::size_t>(K));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline std::vector<int> random_signs(int K, std::mt19937_64& rng) {
  std::vector<int> s(static_cast<std::size_t>(K));
  for (int& v : s) v = (rng() & 1) ? 1 : -1;
  return s;
}

/// `agreeing` chains share W, Z up to permutation and sign; the remaining
/// chains carry unrelated Gaussian loadings.
inline sgfa::ChainFactorSummary constructed_summary(int chains, int agreeing, int D, int K, int N,
                                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd W = block_loadings(D, K, rng);
  const Eigen::MatrixXd Z = random_matrix(K, N, rng);
  sgfa::ChainFactorSummary s;
  s.view_dims = {D / 2, D - D / 2};
  for (int c = 0; c < chains; ++c) {
    if (c < agreeing) {
      s.W.push_back(W);
      s.Z.push_back(Z);
      if (c > 0) permute_and_flip(s, c, random_perm(K, rng), random_signs(K, rng));
    } else {
      s.W.push_back(random_matrix(D, K, rng));
      s.Z.push_back(random_matrix(K, N, rng));
    }
  }
  return s;
}

/// Largest difference between two robust sets, after matching their factor
/// order by loading; +inf if the sizes differ.
inline double set_distance(const sgfa::RobustFactorSet& a, const sgfa::RobustFactorSet& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (const auto& fa : a.factors) {
    double best = INFINITY;
    for (const auto& fb : b.factors)
      best = std::min(best, std::max((fa.loading - fb.loading).cwiseAbs().maxCoeff(),
                                     (fa.latent - fb.latent).cwiseAbs().maxCoeff()));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace fixtures
