#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sgfa/dataset.hpp"

namespace sgfa {

enum class ModelFamily {
  GfaArd,        ///< vanilla GFA, ARD precision per (view, factor)
  SparseGfaRhs,  ///< sparse GFA, regularised horseshoe over W and Z
};

const char* to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view text);

/// Prior hyperparameters.
///
/// Gamma priors use the shape-rate convention. The slab prior on c^2 is
/// InvGamma(nu/2, nu*s^2/2) in the shape-scale convention.
struct HyperParams {
  /// Prior guess of relevant features per view. Empty means D_m / 3.
  std::vector<double> p0;
  double a_rho = 1.0;
  double b_rho = 1.0;
  double nu = 4.0;
  double s = 2.0;
  double a_alpha = 1e-3;
  double b_alpha = 1e-3;
};

struct ModelSpec {
  ModelFamily family = ModelFamily::SparseGfaRhs;
  std::vector<int> view_dims;
  int num_samples = 0;
  int num_factors = 0;
  HyperParams hyper;

  int num_views() const { return static_cast<int>(view_dims.size()); }
  int total_features() const;
  /// Row offset of view m inside the stacked loading matrix.
  int view_offset(int m) const;
  double p0(int m) const;
  void validate() const;
};

/// Named parameter blocks. Every block except W and Z is positive and is
/// stored on the log scale.
enum class Block { W, Z, LambdaW, TauW, C2W, LambdaZ, TauZ, C2Z, Rho, Alpha };

const char* block_name(Block block);
bool is_positive_block(Block block);

struct Slice {
  std::size_t offset = 0;
  std::size_t length = 0;
  friend bool operator==(const Slice&, const Slice&) = default;
};

/// Position of every parameter block inside the flat unconstrained vector.
///
/// Matrix blocks are column-major: W is (sum D_m) x K with views stacked by
/// rows, Z and lambda_z are K x N, lambda_w matches W, c2_w and alpha are
/// M x K.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelSpec& spec);

  std::size_t size() const { return size_; }
  bool has(Block block) const;
  Slice slice(Block block) const;
  const std::vector<Block>& blocks() const { return blocks_; }

  ModelFamily family() const { return family_; }
  int num_views() const { return static_cast<int>(view_dims_.size()); }
  const std::vector<int>& view_dims() const { return view_dims_; }
  int total_features() const { return total_features_; }
  int num_samples() const { return num_samples_; }
  int num_factors() const { return num_factors_; }

  /// Block the coordinate belongs to.
  Block block_of(std::size_t coordinate) const;
  /// Human-readable name such as "W[3,1]" or "log_rho[0]".
  std::string coordinate_name(std::size_t coordinate) const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  ModelFamily family_ = ModelFamily::SparseGfaRhs;
  std::vector<int> view_dims_;
  int total_features_ = 0;
  int num_samples_ = 0;
  int num_factors_ = 0;
  std::vector<Block> blocks_;
  std::vector<Slice> slices_;
  std::size_t size_ = 0;
};

ParamLayout build_layout(const ModelSpec& spec);

/// Flat parameter vector in unconstrained space plus its layout.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(ParamLayout layout, Eigen::VectorXd values);
  static ParamVector zeros(ParamLayout layout);

  const ParamLayout& layout() const { return layout_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

  Eigen::Ref<const Eigen::VectorXd> block(Block b) const;
  Eigen::Ref<Eigen::VectorXd> block(Block b);

  /// Block values on the constrained scale (exp applied to positive blocks).
  Eigen::VectorXd constrained(Block b) const;

  Eigen::MatrixXd W() const;
  Eigen::MatrixXd Z() const;

 private:
  ParamLayout layout_;
  Eigen::VectorXd values_;
};

/// Per-block contributions to the log joint. Jacobian terms of the log
/// transforms are kept separate from the priors.
struct LogJointTerms {
  double likelihood = 0.0;
  double w_prior = 0.0;
  double z_prior = 0.0;
  double lambda_prior = 0.0;
  double tau_prior = 0.0;
  double c2_prior = 0.0;
  double rho_prior = 0.0;
  double alpha_prior = 0.0;
  double jacobian = 0.0;

  double total() const;
  std::string describe() const;
};

/// sqrt(c2 tau^2 lambda^2 / (c2 + tau^2 lambda^2)).
double regularized_scale(double lambda, double tau, double c2);

/// Global-scale prior width for tau_w of one view: p0/(D-p0) / sqrt(N rho).
double tau0(double p0, int D, int N, double rho);

/// A model bound to a dataset. Evaluations are const and may run
/// concurrently from several threads.
class FactorModel {
 public:
  FactorModel(ModelSpec spec, const MultiViewDataset& data);

  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t dimension() const { return layout_.size(); }
  const Eigen::MatrixXd& stacked_data() const { return X_; }

  LogJointTerms terms(const Eigen::VectorXd& q) const;

  /// Log joint in unconstrained space. Returns a non-finite value instead of
  /// throwing when the parameters overflow.
  double log_density(const Eigen::VectorXd& q) const;

  /// Log joint and its gradient. Non-throwing, as log_density.
  double log_density_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const;

  /// Non-centred coordinates u share the layout of q, but the W and Z blocks
  /// hold standardised values: W = W~ * sd(W), Z = Z~ * sd(Z) with the prior
  /// standard deviations implied by the remaining blocks. The density in u
  /// is the centred one times the Jacobian of that map.
  double log_density_noncentered(const Eigen::VectorXd& u) const;
  double log_density_grad_noncentered(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const;
  Eigen::VectorXd to_centered(const Eigen::VectorXd& u) const;
  Eigen::VectorXd to_noncentered(const Eigen::VectorXd& q) const;

 private:
  struct RhsScales {
    Eigen::ArrayXXd inv_v;  // 1 / prior variance
    Eigen::ArrayXXd fc;     // d log v / d log(tau^2 lambda^2)
  };
  static RhsScales make_scales(const Eigen::ArrayXXd& la, const Eigen::ArrayXXd& inv_c2);
  RhsScales w_scales(const Eigen::VectorXd& q) const;
  RhsScales z_scales(const Eigen::VectorXd& q) const;
  Eigen::ArrayXXd ard_sd(const Eigen::VectorXd& q) const;
  void push_w_scale_grad(const Eigen::ArrayXXd& dlogv, const RhsScales& s, double* g) const;
  void push_z_scale_grad(const Eigen::ArrayXXd& dlogv, const RhsScales& s, double* g) const;
  void sparse_hyper(const Eigen::VectorXd& q, double* g, LogJointTerms& t) const;
  void ard_hyper(const Eigen::VectorXd& q, double* g, LogJointTerms& t) const;

  double sparse_value_grad(const Eigen::VectorXd& q, Eigen::VectorXd* grad,
                           LogJointTerms* terms) const;
  double ard_value_grad(const Eigen::VectorXd& q, Eigen::VectorXd* grad,
                        LogJointTerms* terms) const;
  double noncentered_value_grad(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const;
  double likelihood(const Eigen::Ref<const Eigen::MatrixXd>& W,
                    const Eigen::Ref<const Eigen::MatrixXd>& Z, const double* log_rho,
                    Eigen::MatrixXd* gW, Eigen::MatrixXd* gZ, double* g_rho) const;

  ModelSpec spec_;
  ParamLayout layout_;
  Eigen::MatrixXd X_;
  std::vector<double> log_tau0_prefactor_;
};

double log_joint_sparse_gfa(const ParamVector& params, const MultiViewDataset& data,
                            const ModelSpec& spec);
double log_joint_gfa(const ParamVector& params, const MultiViewDataset& data,
                     const ModelSpec& spec);
/// Dispatches on spec.family. Throws a numerical error with a per-block
/// breakdown if the result is not finite.
double log_joint(const ParamVector& params, const MultiViewDataset& data,
                 const ModelSpec& spec);
LogJointTerms log_joint_terms(const ParamVector& params, const MultiViewDataset& data,
                              const ModelSpec& spec);
Eigen::VectorXd grad_log_joint(const ParamVector& params, const MultiViewDataset& data,
                               const ModelSpec& spec);

/// Values pinned during forward sampling, all on the constrained scale.
/// Shapes follow the ParamLayout conventions.
struct ForwardOverrides {
  std::optional<Eigen::MatrixXd> W;         // D x K
  std::optional<Eigen::MatrixXd> Z;         // K x N
  std::optional<Eigen::MatrixXd> lambda_w;  // D x K
  std::optional<Eigen::VectorXd> tau_w;     // M
  std::optional<Eigen::MatrixXd> c2_w;      // M x K
  std::optional<Eigen::MatrixXd> lambda_z;  // K x N
  std::optional<Eigen::VectorXd> tau_z;     // K
  std::optional<Eigen::VectorXd> c2_z;      // K
  std::optional<Eigen::VectorXd> rho;       // M
  std::optional<Eigen::MatrixXd> alpha;     // M x K
};

struct ForwardSample {
  MultiViewDataset data;
  ParamVector params;
};

/// Draws parameters top-down through the prior hierarchy, then the data.
ForwardSample forward_sample(const ModelSpec& spec, const ForwardOverrides& fixed,
                             std::uint64_t seed);

}  // namespace sgfa
