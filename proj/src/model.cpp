#include "sgfa/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "sgfa/error.hpp"

namespace sgfa {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
const double kLog2OverPi = std::log(2.0 / std::numbers::pi);

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(exp(a) + exp(b)) for finite a, b.
inline double lse(double a, double b) {
  return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
}

using CMap = Eigen::Map<const Eigen::MatrixXd>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using MMap = Eigen::Map<Eigen::MatrixXd>;
using MVec = Eigen::Map<Eigen::VectorXd>;

}  // namespace

const char* to_string(ModelFamily family) {
  return family == ModelFamily::GfaArd ? "gfa" : "sparse-gfa";
}

ModelFamily parse_model_family(std::string_view text) {
  if (text == "gfa" || text == "gfa-ard" || text == "GFA_ARD") return ModelFamily::GfaArd;
  if (text == "sparse-gfa" || text == "sgfa" || text == "SparseGFA_RHS")
    return ModelFamily::SparseGfaRhs;
  fail(ErrorKind::Config, "unknown model family '" + std::string(text) +
                              "' (expected gfa or sparse-gfa)");
}

int ModelSpec::total_features() const {
  int total = 0;
  for (int d : view_dims) total += d;
  return total;
}

int ModelSpec::view_offset(int m) const {
  int off = 0;
  for (int i = 0; i < m; ++i) off += view_dims[i];
  return off;
}

double ModelSpec::p0(int m) const {
  if (!hyper.p0.empty()) return hyper.p0.at(m);
  return view_dims.at(m) / 3.0;
}

void ModelSpec::validate() const {
  require(num_views() >= 1, ErrorKind::InvalidArgument, "model spec: need at least one view");
  for (int d : view_dims)
    require(d >= 1, ErrorKind::InvalidArgument, "model spec: every view needs D_m >= 1");
  require(num_factors >= 1, ErrorKind::InvalidArgument, "model spec: K must be >= 1");
  require(num_samples >= 1, ErrorKind::InvalidArgument, "model spec: N must be >= 1");
  const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  require(positive(hyper.a_rho) && positive(hyper.b_rho), ErrorKind::InvalidArgument,
          "model spec: a_rho and b_rho must be positive");
  if (family == ModelFamily::SparseGfaRhs) {
    require(positive(hyper.nu) && positive(hyper.s), ErrorKind::InvalidArgument,
            "model spec: nu and s must be positive");
    require(hyper.p0.empty() || static_cast<int>(hyper.p0.size()) == num_views(),
            ErrorKind::InvalidArgument, "model spec: p0 needs one entry per view");
    for (int m = 0; m < num_views(); ++m) {
      const double p = p0(m);
      if (!(p > 0.0 && p < view_dims[m])) {
        std::ostringstream os;
        os << "model spec: p0 for view " << m << " is " << p << ", must lie in (0, "
           << view_dims[m] << ")";
        fail(ErrorKind::InvalidArgument, os.str());
      }
    }
  } else {
    require(positive(hyper.a_alpha) && positive(hyper.b_alpha), ErrorKind::InvalidArgument,
            "model spec: a_alpha and b_alpha must be positive");
  }
}

const char* block_name(Block block) {
  switch (block) {
    case Block::W: return "W";
    case Block::Z: return "Z";
    case Block::LambdaW: return "lambda_w";
    case Block::TauW: return "tau_w";
    case Block::C2W: return "c2_w";
    case Block::LambdaZ: return "lambda_z";
    case Block::TauZ: return "tau_z";
    case Block::C2Z: return "c2_z";
    case Block::Rho: return "rho";
    case Block::Alpha: return "alpha";
  }
  return "?";
}

bool is_positive_block(Block block) { return block != Block::W && block != Block::Z; }

ParamLayout::ParamLayout(const ModelSpec& spec)
    : family_(spec.family),
      view_dims_(spec.view_dims),
      total_features_(spec.total_features()),
      num_samples_(spec.num_samples),
      num_factors_(spec.num_factors) {
  spec.validate();
  const auto D = static_cast<std::size_t>(total_features_);
  const auto N = static_cast<std::size_t>(num_samples_);
  const auto K = static_cast<std::size_t>(num_factors_);
  const auto M = view_dims_.size();

  auto add = [&](Block b, std::size_t len) {
    if (len > std::numeric_limits<std::size_t>::max() - size_)
      fail(ErrorKind::InvalidArgument, "parameter layout: total size overflows");
    blocks_.push_back(b);
    slices_.push_back({size_, len});
    size_ += len;
  };
  auto product = [](std::size_t a, std::size_t b) {
    if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a)
      fail(ErrorKind::InvalidArgument, "parameter layout: block size overflows");
    return a * b;
  };

  add(Block::W, product(D, K));
  add(Block::Z, product(K, N));
  if (family_ == ModelFamily::SparseGfaRhs) {
    add(Block::LambdaW, product(D, K));
    add(Block::TauW, M);
    add(Block::C2W, product(M, K));
    add(Block::LambdaZ, product(K, N));
    add(Block::TauZ, K);
    add(Block::C2Z, K);
    add(Block::Rho, M);
  } else {
    add(Block::Alpha, product(M, K));
    add(Block::Rho, M);
  }
}

ParamLayout build_layout(const ModelSpec& spec) { return ParamLayout(spec); }

bool ParamLayout::has(Block block) const {
  return std::find(blocks_.begin(), blocks_.end(), block) != blocks_.end();
}

Slice ParamLayout::slice(Block block) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i] == block) return slices_[i];
  fail(ErrorKind::InvalidArgument,
       std::string("parameter layout has no block ") + block_name(block));
}

Block ParamLayout::block_of(std::size_t coordinate) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (coordinate >= slices_[i].offset && coordinate < slices_[i].offset + slices_[i].length)
      return blocks_[i];
  fail(ErrorKind::InvalidArgument, "coordinate outside the parameter layout");
}

std::string ParamLayout::coordinate_name(std::size_t coordinate) const {
  const Block b = block_of(coordinate);
  const std::size_t i = coordinate - slice(b).offset;
  std::ostringstream os;
  if (is_positive_block(b)) os << "log_";
  os << block_name(b) << '[';
  const auto D = static_cast<std::size_t>(total_features_);
  const auto K = static_cast<std::size_t>(num_factors_);
  const auto M = view_dims_.size();
  switch (b) {
    case Block::W:
    case Block::LambdaW: os << i % D << ',' << i / D; break;
    case Block::Z:
    case Block::LambdaZ: os << i % K << ',' << i / K; break;
    case Block::C2W:
    case Block::Alpha: os << i % M << ',' << i / M; break;
    default: os << i; break;
  }
  os << ']';
  return os.str();
}

ParamVector::ParamVector(ParamLayout layout, Eigen::VectorXd values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.size()) != layout_.size()) {
    std::ostringstream os;
    os << "parameter vector has length " << values_.size() << ", layout expects "
       << layout_.size();
    fail(ErrorKind::Shape, os.str());
  }
}

ParamVector ParamVector::zeros(ParamLayout layout) {
  const auto n = static_cast<Eigen::Index>(layout.size());
  return ParamVector(std::move(layout), Eigen::VectorXd::Zero(n));
}

Eigen::Ref<const Eigen::VectorXd> ParamVector::block(Block b) const {
  const Slice s = layout_.slice(b);
  return values_.segment(static_cast<Eigen::Index>(s.offset),
                         static_cast<Eigen::Index>(s.length));
}

Eigen::Ref<Eigen::VectorXd> ParamVector::block(Block b) {
  const Slice s = layout_.slice(b);
  return values_.segment(static_cast<Eigen::Index>(s.offset),
                         static_cast<Eigen::Index>(s.length));
}

Eigen::VectorXd ParamVector::constrained(Block b) const {
  Eigen::VectorXd v = block(b);
  if (is_positive_block(b)) v = v.array().exp().matrix();
  return v;
}

Eigen::MatrixXd ParamVector::W() const {
  return CMap(block(Block::W).data(), layout_.total_features(), layout_.num_factors());
}

Eigen::MatrixXd ParamVector::Z() const {
  return CMap(block(Block::Z).data(), layout_.num_factors(), layout_.num_samples());
}

double LogJointTerms::total() const {
  return likelihood + w_prior + z_prior + lambda_prior + tau_prior + c2_prior + rho_prior +
         alpha_prior + jacobian;
}

std::string LogJointTerms::describe() const {
  std::ostringstream os;
  os << "likelihood=" << likelihood << " w_prior=" << w_prior << " z_prior=" << z_prior
     << " lambda_prior=" << lambda_prior << " tau_prior=" << tau_prior
     << " c2_prior=" << c2_prior << " rho_prior=" << rho_prior
     << " alpha_prior=" << alpha_prior << " jacobian=" << jacobian;
  return os.str();
}

double regularized_scale(double lambda, double tau, double c2) {
  require(lambda > 0.0 && tau > 0.0 && c2 > 0.0, ErrorKind::InvalidArgument,
          "regularized_scale: arguments must be positive");
  if (std::isinf(c2)) return tau * lambda;
  if (std::isinf(lambda) || std::isinf(tau)) return std::sqrt(c2);
  // c2 t^2 / (c2 + t^2) computed on the log scale to survive extreme ratios.
  const double lc = std::log(c2);
  const double la = 2.0 * (std::log(tau) + std::log(lambda));
  return std::exp(0.5 * (lc + la - lse(lc, la)));
}

double tau0(double p0, int D, int N, double rho) {
  require(p0 > 0.0 && p0 < D, ErrorKind::InvalidArgument,
          "tau0: p0 must lie strictly between 0 and D");
  require(N >= 1 && rho > 0.0, ErrorKind::InvalidArgument,
          "tau0: N must be >= 1 and rho positive");
  return p0 / (D - p0) / std::sqrt(N * rho);
}

FactorModel::FactorModel(ModelSpec spec, const MultiViewDataset& data)
    : spec_(std::move(spec)), layout_(spec_) {
  data.validate();
  if (data.view_dims() != spec_.view_dims ||
      static_cast<int>(data.num_samples()) != spec_.num_samples)
    fail(ErrorKind::Shape, "model: dataset dimensions do not match the model spec");
  if (data.has_missing())
    fail(ErrorKind::InvalidArgument,
         "model: dataset contains missing values; impute before fitting");
  X_ = data.stacked();
  for (int m = 0; m < spec_.num_views(); ++m) {
    const double p = spec_.p0(m);
    log_tau0_prefactor_.push_back(std::log(p / (spec_.view_dims[m] - p)) -
                                  0.5 * std::log(static_cast<double>(spec_.num_samples)));
  }
}

double FactorModel::likelihood(const Eigen::Ref<const Eigen::MatrixXd>& W,
                               const Eigen::Ref<const Eigen::MatrixXd>& Z, const double* log_rho,
                               Eigen::MatrixXd* gW, Eigen::MatrixXd* gZ, double* g_rho) const {
  const int N = layout_.num_samples();
  // Per-thread residual buffer; a fresh allocation of this size per call
  // costs more than the products themselves.
  thread_local Eigen::MatrixXd R;
  R = X_;
  R.noalias() -= W * Z;

  double ll = 0.0;
  int off = 0;
  for (int m = 0; m < spec_.num_views(); ++m) {
    const int Dm = spec_.view_dims[m];
    const double rho = std::exp(log_rho[m]);
    const double ss = R.middleRows(off, Dm).squaredNorm();
    const double cells = static_cast<double>(Dm) * N;
    ll += cells * (0.5 * log_rho[m] - kHalfLog2Pi) - 0.5 * rho * ss;
    if (g_rho) {
      g_rho[m] += 0.5 * cells - 0.5 * rho * ss;
      R.middleRows(off, Dm) *= rho;
    }
    off += Dm;
  }
  if (gW) gW->noalias() = R * Z.transpose();
  if (gZ) gZ->noalias() = W.transpose() * R;
  return ll;
}

FactorModel::RhsScales FactorModel::w_scales(const Eigen::VectorXd& q) const {
  const int M = spec_.num_views();
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  CMap log_lw(q.data() + layout_.slice(Block::LambdaW).offset, D, K);
  CVec log_tw(q.data() + layout_.slice(Block::TauW).offset, M);
  CMap log_c2w(q.data() + layout_.slice(Block::C2W).offset, M, K);

  Eigen::ArrayXXd la(D, K), inv_c2(D, K);
  for (int m = 0, off = 0; m < M; off += spec_.view_dims[m], ++m) {
    const int Dm = spec_.view_dims[m];
    la.middleRows(off, Dm) = 2.0 * (log_lw.middleRows(off, Dm).array() + log_tw[m]);
    for (int k = 0; k < K; ++k) inv_c2.col(k).segment(off, Dm) = std::exp(-log_c2w(m, k));
  }
  return make_scales(la, inv_c2);
}

FactorModel::RhsScales FactorModel::z_scales(const Eigen::VectorXd& q) const {
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  CMap log_lz(q.data() + layout_.slice(Block::LambdaZ).offset, K, N);
  CVec log_tz(q.data() + layout_.slice(Block::TauZ).offset, K);
  CVec log_c2z(q.data() + layout_.slice(Block::C2Z).offset, K);

  Eigen::ArrayXXd la = 2.0 * (log_lz.array().colwise() + log_tz.array());
  Eigen::ArrayXXd inv_c2 = (-log_c2z.array()).exp().replicate(1, N);
  return make_scales(la, inv_c2);
}

// v = c2 a / (c2 + a) with a = tau^2 lambda^2, so 1/v = 1/a + 1/c2.
FactorModel::RhsScales FactorModel::make_scales(const Eigen::ArrayXXd& la,
                                                const Eigen::ArrayXXd& inv_c2) {
  RhsScales s;
  const Eigen::ArrayXXd inv_a = (-la).exp();
  s.inv_v = inv_a + inv_c2;
  s.fc = inv_a / s.inv_v;
  return s;
}

// Chain rule from d/dlog v of every W entry to lambda_w, tau_w and c2_w.
void FactorModel::push_w_scale_grad(const Eigen::ArrayXXd& dlogv, const RhsScales& s,
                                    double* g) const {
  const int M = spec_.num_views();
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  MMap g_lw(g + layout_.slice(Block::LambdaW).offset, D, K);
  MVec g_tw(g + layout_.slice(Block::TauW).offset, M);
  MMap g_c2w(g + layout_.slice(Block::C2W).offset, M, K);

  const Eigen::ArrayXXd d_la = dlogv * s.fc;
  const Eigen::ArrayXXd d_c2 = dlogv - d_la;
  g_lw.array() += 2.0 * d_la;
  for (int m = 0, off = 0; m < M; off += spec_.view_dims[m], ++m) {
    const int Dm = spec_.view_dims[m];
    g_tw[m] += 2.0 * d_la.middleRows(off, Dm).sum();
    g_c2w.row(m) += d_c2.middleRows(off, Dm).colwise().sum().matrix();
  }
}

void FactorModel::push_z_scale_grad(const Eigen::ArrayXXd& dlogv, const RhsScales& s,
                                    double* g) const {
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  MMap g_lz(g + layout_.slice(Block::LambdaZ).offset, K, N);
  MVec g_tz(g + layout_.slice(Block::TauZ).offset, K);
  MVec g_c2z(g + layout_.slice(Block::C2Z).offset, K);

  const Eigen::ArrayXXd d_la = dlogv * s.fc;
  g_lz.array() += 2.0 * d_la;
  g_tz += 2.0 * d_la.rowwise().sum().matrix();
  g_c2z += (dlogv - d_la).rowwise().sum().matrix();
}

// Priors of every shrinkage block plus the log-transform Jacobians.
void FactorModel::sparse_hyper(const Eigen::VectorXd& q, double* g, LogJointTerms& t) const {
  const int M = spec_.num_views();
  const auto& hp = spec_.hyper;
  const Slice sTW = layout_.slice(Block::TauW), sR = layout_.slice(Block::Rho);
  CVec log_tw(q.data() + sTW.offset, M);
  CVec log_rho(q.data() + sR.offset, M);

  // Local scales: half-Cauchy(0, 1) on the log scale, log(2/pi) - log(1 + e^{2u}).
  auto half_cauchy_unit = [&](const Slice& s) {
    const auto u = CVec(q.data() + s.offset, static_cast<Eigen::Index>(s.length)).array();
    const Eigen::ArrayXd e = (-2.0 * u.abs()).exp();
    const Eigen::ArrayXd softplus = (2.0 * u).max(0.0) + (1.0 + e).log();
    if (g) {
      const Eigen::ArrayXd sig = (u >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
      MVec(g + s.offset, static_cast<Eigen::Index>(s.length)).array() -= 2.0 * sig;
    }
    return static_cast<double>(s.length) * kLog2OverPi - softplus.sum();
  };
  t.lambda_prior = half_cauchy_unit(layout_.slice(Block::LambdaW)) +
                   half_cauchy_unit(layout_.slice(Block::LambdaZ));
  t.tau_prior = half_cauchy_unit(layout_.slice(Block::TauZ));

  // tau_w^(m) ~ half-Cauchy(0, tau0^(m)) with tau0 depending on rho^(m).
  for (int m = 0; m < M; ++m) {
    const double log_t0 = log_tau0_prefactor_[m] - 0.5 * log_rho[m];
    const double r = 2.0 * (log_tw[m] - log_t0);
    t.tau_prior += kLog2OverPi - log_t0 - softplus(r);
    if (g) {
      g[sTW.offset + m] -= 2.0 * sigmoid(r);
      g[sR.offset + m] += 0.5 - sigmoid(r);
    }
  }

  // Slab widths: c2 ~ InvGamma(nu/2, nu s^2/2).
  const double a_c = 0.5 * hp.nu;
  const double b_c = 0.5 * hp.nu * hp.s * hp.s;
  const double c2_const = a_c * std::log(b_c) - std::lgamma(a_c);
  auto inv_gamma = [&](const Slice& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.length; ++i) {
      const double u = q[static_cast<Eigen::Index>(s.offset + i)];
      const double e = b_c * std::exp(-u);
      acc += c2_const - (a_c + 1.0) * u - e;
      if (g) g[s.offset + i] += -(a_c + 1.0) + e;
    }
    return acc;
  };
  t.c2_prior = inv_gamma(layout_.slice(Block::C2W)) + inv_gamma(layout_.slice(Block::C2Z));

  const double rho_const = hp.a_rho * std::log(hp.b_rho) - std::lgamma(hp.a_rho);
  for (int m = 0; m < M; ++m) {
    const double e = hp.b_rho * std::exp(log_rho[m]);
    t.rho_prior += rho_const + (hp.a_rho - 1.0) * log_rho[m] - e;
    if (g) g[sR.offset + m] += (hp.a_rho - 1.0) - e;
  }

  for (Block b : {Block::LambdaW, Block::TauW, Block::C2W, Block::LambdaZ, Block::TauZ,
                  Block::C2Z, Block::Rho}) {
    const Slice s = layout_.slice(b);
    t.jacobian += CVec(q.data() + s.offset, static_cast<Eigen::Index>(s.length)).sum();
    if (g) MVec(g + s.offset, static_cast<Eigen::Index>(s.length)).array() += 1.0;
  }
}

void FactorModel::ard_hyper(const Eigen::VectorXd& q, double* g, LogJointTerms& t) const {
  const auto& hp = spec_.hyper;
  auto gamma_block = [&](const Slice& s, double shape, double rate) {
    const double c = shape * std::log(rate) - std::lgamma(shape);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.length; ++i) {
      const double u = q[static_cast<Eigen::Index>(s.offset + i)];
      const double e = rate * std::exp(u);
      acc += c + (shape - 1.0) * u - e;
      if (g) g[s.offset + i] += (shape - 1.0) - e;
    }
    return acc;
  };
  t.alpha_prior = gamma_block(layout_.slice(Block::Alpha), hp.a_alpha, hp.b_alpha);
  t.rho_prior = gamma_block(layout_.slice(Block::Rho), hp.a_rho, hp.b_rho);
  for (Block b : {Block::Alpha, Block::Rho}) {
    const Slice s = layout_.slice(b);
    t.jacobian += CVec(q.data() + s.offset, static_cast<Eigen::Index>(s.length)).sum();
    if (g) MVec(g + s.offset, static_cast<Eigen::Index>(s.length)).array() += 1.0;
  }
}

// Per-entry standard deviation of W under the ARD prior, 1/sqrt(alpha).
Eigen::ArrayXXd FactorModel::ard_sd(const Eigen::VectorXd& q) const {
  const int M = spec_.num_views();
  const int K = layout_.num_factors();
  CMap log_alpha(q.data() + layout_.slice(Block::Alpha).offset, M, K);
  Eigen::ArrayXXd sd(layout_.total_features(), K);
  for (int m = 0, off = 0; m < M; off += spec_.view_dims[m], ++m)
    for (int k = 0; k < K; ++k)
      sd.col(k).segment(off, spec_.view_dims[m]) = std::exp(-0.5 * log_alpha(m, k));
  return sd;
}

double FactorModel::sparse_value_grad(const Eigen::VectorXd& q, Eigen::VectorXd* grad,
                                      LogJointTerms* out) const {
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  const Slice sW = layout_.slice(Block::W), sZ = layout_.slice(Block::Z);
  const Slice sR = layout_.slice(Block::Rho);
  CMap W(q.data() + sW.offset, D, K);
  CMap Z(q.data() + sZ.offset, K, N);
  double* g = grad ? grad->data() : nullptr;

  LogJointTerms t;
  Eigen::MatrixXd gW, gZ;
  t.likelihood = likelihood(W, Z, q.data() + sR.offset, g ? &gW : nullptr, g ? &gZ : nullptr,
                            g ? g + sR.offset : nullptr);

  auto normal_prior = [&](const Eigen::ArrayXXd& x, const RhsScales& s, double& value,
                          Eigen::MatrixXd* gx) {
    const Eigen::ArrayXXd x2v = x.square() * s.inv_v;
    value = -kHalfLog2Pi * static_cast<double>(x.size()) + 0.5 * s.inv_v.log().sum() -
            0.5 * x2v.sum();
    if (gx) gx->array() -= x * s.inv_v;
    return Eigen::ArrayXXd(0.5 * x2v - 0.5);
  };

  const RhsScales sw = w_scales(q);
  const RhsScales sz = z_scales(q);
  const Eigen::ArrayXXd dw = normal_prior(W.array(), sw, t.w_prior, g ? &gW : nullptr);
  const Eigen::ArrayXXd dz = normal_prior(Z.array(), sz, t.z_prior, g ? &gZ : nullptr);
  if (g) {
    MMap(g + sW.offset, D, K) += gW;
    MMap(g + sZ.offset, K, N) += gZ;
    push_w_scale_grad(dw, sw, g);
    push_z_scale_grad(dz, sz, g);
  }
  sparse_hyper(q, g, t);
  if (out) *out = t;
  return t.total();
}

double FactorModel::ard_value_grad(const Eigen::VectorXd& q, Eigen::VectorXd* grad,
                                   LogJointTerms* out) const {
  const int M = spec_.num_views();
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  const Slice sW = layout_.slice(Block::W), sZ = layout_.slice(Block::Z);
  const Slice sA = layout_.slice(Block::Alpha), sR = layout_.slice(Block::Rho);
  CMap W(q.data() + sW.offset, D, K);
  CMap Z(q.data() + sZ.offset, K, N);
  CMap log_alpha(q.data() + sA.offset, M, K);
  double* g = grad ? grad->data() : nullptr;

  LogJointTerms t;
  Eigen::MatrixXd gW, gZ;
  t.likelihood = likelihood(W, Z, q.data() + sR.offset, g ? &gW : nullptr, g ? &gZ : nullptr,
                            g ? g + sR.offset : nullptr);

  for (int m = 0, off = 0; m < M; off += spec_.view_dims[m], ++m) {
    const int Dm = spec_.view_dims[m];
    for (int k = 0; k < K; ++k) {
      const double la = log_alpha(m, k);
      const double alpha = std::exp(la);
      const auto w = W.col(k).segment(off, Dm);
      const double ss = w.squaredNorm();
      t.w_prior += Dm * (0.5 * la - kHalfLog2Pi) - 0.5 * alpha * ss;
      if (g) {
        gW.col(k).segment(off, Dm) -= alpha * w;
        g[sA.offset + static_cast<std::size_t>(k) * M + m] += 0.5 * Dm - 0.5 * alpha * ss;
      }
    }
  }
  t.z_prior = -kHalfLog2Pi * static_cast<double>(sZ.length) - 0.5 * Z.squaredNorm();
  if (g) {
    gZ -= Z;
    MMap(g + sW.offset, D, K) += gW;
    MMap(g + sZ.offset, K, N) += gZ;
  }
  ard_hyper(q, g, t);
  if (out) *out = t;
  return t.total();
}

// Non-centred coordinates: W = W~ * sd_w and Z = Z~ * sd_z elementwise, with
// W~ and Z~ standard normal a priori. Every other block is shared.
double FactorModel::noncentered_value_grad(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  const Slice sW = layout_.slice(Block::W), sZ = layout_.slice(Block::Z);
  const Slice sR = layout_.slice(Block::Rho);
  CMap Wt(u.data() + sW.offset, D, K);
  CMap Zt(u.data() + sZ.offset, K, N);
  double* g = grad ? grad->data() : nullptr;

  LogJointTerms t;
  Eigen::MatrixXd gW, gZ;
  const double std_normal_const = -kHalfLog2Pi * static_cast<double>(sW.length + sZ.length);
  t.w_prior = std_normal_const - 0.5 * Wt.squaredNorm() - 0.5 * Zt.squaredNorm();

  if (spec_.family == ModelFamily::SparseGfaRhs) {
    const RhsScales sw = w_scales(u);
    const RhsScales sz = z_scales(u);
    const Eigen::ArrayXXd sd_w = sw.inv_v.rsqrt();
    const Eigen::ArrayXXd sd_z = sz.inv_v.rsqrt();
    const Eigen::MatrixXd W = (Wt.array() * sd_w).matrix();
    const Eigen::MatrixXd Z = (Zt.array() * sd_z).matrix();
    t.likelihood = likelihood(W, Z, u.data() + sR.offset, g ? &gW : nullptr, g ? &gZ : nullptr,
                              g ? g + sR.offset : nullptr);
    if (g) {
      MMap(g + sW.offset, D, K) = (gW.array() * sd_w).matrix() - Wt;
      MMap(g + sZ.offset, K, N) = (gZ.array() * sd_z).matrix() - Zt;
      push_w_scale_grad(0.5 * gW.array() * W.array(), sw, g);
      push_z_scale_grad(0.5 * gZ.array() * Z.array(), sz, g);
    }
    sparse_hyper(u, g, t);
  } else {
    const int M = spec_.num_views();
    const Eigen::ArrayXXd sd_w = ard_sd(u);
    const Eigen::MatrixXd W = (Wt.array() * sd_w).matrix();
    t.likelihood = likelihood(W, Zt, u.data() + sR.offset, g ? &gW : nullptr, g ? &gZ : nullptr,
                              g ? g + sR.offset : nullptr);
    if (g) {
      MMap(g + sW.offset, D, K) = (gW.array() * sd_w).matrix() - Wt;
      MMap(g + sZ.offset, K, N) = gZ - Zt;
      const Eigen::ArrayXXd d = gW.array() * W.array();
      const std::size_t a_off = layout_.slice(Block::Alpha).offset;
      for (int m = 0, off = 0; m < M; off += spec_.view_dims[m], ++m)
        for (int k = 0; k < K; ++k)
          g[a_off + static_cast<std::size_t>(k) * M + m] -=
              0.5 * d.col(k).segment(off, spec_.view_dims[m]).sum();
    }
    ard_hyper(u, g, t);
  }
  return t.total();
}

Eigen::VectorXd FactorModel::to_centered(const Eigen::VectorXd& u) const {
  require(static_cast<std::size_t>(u.size()) == layout_.size(), ErrorKind::Shape,
          "model: parameter vector length does not match the layout");
  Eigen::VectorXd q = u;
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  MMap W(q.data() + layout_.slice(Block::W).offset, D, K);
  MMap Z(q.data() + layout_.slice(Block::Z).offset, K, N);
  if (spec_.family == ModelFamily::SparseGfaRhs) {
    W.array() *= w_scales(u).inv_v.rsqrt();
    Z.array() *= z_scales(u).inv_v.rsqrt();
  } else {
    W.array() *= ard_sd(u);
  }
  return q;
}

Eigen::VectorXd FactorModel::to_noncentered(const Eigen::VectorXd& q) const {
  require(static_cast<std::size_t>(q.size()) == layout_.size(), ErrorKind::Shape,
          "model: parameter vector length does not match the layout");
  Eigen::VectorXd u = q;
  const int D = layout_.total_features();
  const int K = layout_.num_factors();
  const int N = layout_.num_samples();
  MMap W(u.data() + layout_.slice(Block::W).offset, D, K);
  MMap Z(u.data() + layout_.slice(Block::Z).offset, K, N);
  if (spec_.family == ModelFamily::SparseGfaRhs) {
    W.array() *= w_scales(q).inv_v.sqrt();
    Z.array() *= z_scales(q).inv_v.sqrt();
  } else {
    W.array() /= ard_sd(q);
  }
  return u;
}

double FactorModel::log_density_noncentered(const Eigen::VectorXd& u) const {
  if (static_cast<std::size_t>(u.size()) != layout_.size())
    return std::numeric_limits<double>::quiet_NaN();
  return noncentered_value_grad(u, nullptr);
}

double FactorModel::log_density_grad_noncentered(const Eigen::VectorXd& u,
                                                 Eigen::VectorXd& grad) const {
  grad.setZero(u.size());
  if (static_cast<std::size_t>(u.size()) != layout_.size())
    return std::numeric_limits<double>::quiet_NaN();
  return noncentered_value_grad(u, &grad);
}

LogJointTerms FactorModel::terms(const Eigen::VectorXd& q) const {
  if (static_cast<std::size_t>(q.size()) != layout_.size())
    fail(ErrorKind::Shape, "model: parameter vector length does not match the layout");
  LogJointTerms t;
  if (spec_.family == ModelFamily::SparseGfaRhs)
    sparse_value_grad(q, nullptr, &t);
  else
    ard_value_grad(q, nullptr, &t);
  return t;
}

double FactorModel::log_density(const Eigen::VectorXd& q) const {
  return spec_.family == ModelFamily::SparseGfaRhs ? sparse_value_grad(q, nullptr, nullptr)
                                                   : ard_value_grad(q, nullptr, nullptr);
}

double FactorModel::log_density_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  grad.setZero(q.size());
  return spec_.family == ModelFamily::SparseGfaRhs ? sparse_value_grad(q, &grad, nullptr)
                                                   : ard_value_grad(q, &grad, nullptr);
}

namespace {

void check_params(const ParamVector& params, const ModelSpec& spec) {
  if (!(params.layout() == ParamLayout(spec)))
    fail(ErrorKind::Shape, "parameter layout does not match the model spec");
  if (!params.values().allFinite())
    fail(ErrorKind::InvalidArgument, "parameter vector has non-finite entries");
}

double checked_total(const LogJointTerms& t) {
  const double v = t.total();
  if (!std::isfinite(v))
    fail(ErrorKind::Numerical, "log joint is not finite: " + t.describe());
  return v;
}

}  // namespace

LogJointTerms log_joint_terms(const ParamVector& params, const MultiViewDataset& data,
                              const ModelSpec& spec) {
  check_params(params, spec);
  return FactorModel(spec, data).terms(params.values());
}

double log_joint(const ParamVector& params, const MultiViewDataset& data,
                 const ModelSpec& spec) {
  return checked_total(log_joint_terms(params, data, spec));
}

double log_joint_sparse_gfa(const ParamVector& params, const MultiViewDataset& data,
                            const ModelSpec& spec) {
  require(spec.family == ModelFamily::SparseGfaRhs, ErrorKind::InvalidArgument,
          "log_joint_sparse_gfa called with a non-sparse spec");
  return log_joint(params, data, spec);
}

double log_joint_gfa(const ParamVector& params, const MultiViewDataset& data,
                     const ModelSpec& spec) {
  require(spec.family == ModelFamily::GfaArd, ErrorKind::InvalidArgument,
          "log_joint_gfa called with a non-ARD spec");
  return log_joint(params, data, spec);
}

Eigen::VectorXd grad_log_joint(const ParamVector& params, const MultiViewDataset& data,
                               const ModelSpec& spec) {
  check_params(params, spec);
  FactorModel model(spec, data);
  Eigen::VectorXd grad;
  const double v = model.log_density_grad(params.values(), grad);
  if (!std::isfinite(v) || !grad.allFinite())
    fail(ErrorKind::Numerical,
         "gradient is not finite: " + model.terms(params.values()).describe());
  return grad;
}

ForwardSample forward_sample(const ModelSpec& spec, const ForwardOverrides& fixed,
                             std::uint64_t seed) {
  spec.validate();
  const int M = spec.num_views();
  const int D = spec.total_features();
  const int K = spec.num_factors;
  const int N = spec.num_samples;
  const auto& hp = spec.hyper;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::cauchy_distribution<double> std_cauchy(0.0, 1.0);

  auto check_shape = [](const auto& opt, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (opt && (opt->rows() != rows || opt->cols() != cols))
      fail(ErrorKind::Shape, std::string("forward_sample: override ") + what +
                                 " has the wrong shape");
  };
  check_shape(fixed.W, D, K, "W");
  check_shape(fixed.Z, K, N, "Z");
  check_shape(fixed.lambda_w, D, K, "lambda_w");
  check_shape(fixed.tau_w, M, 1, "tau_w");
  check_shape(fixed.c2_w, M, K, "c2_w");
  check_shape(fixed.lambda_z, K, N, "lambda_z");
  check_shape(fixed.tau_z, K, 1, "tau_z");
  check_shape(fixed.c2_z, K, 1, "c2_z");
  check_shape(fixed.rho, M, 1, "rho");
  check_shape(fixed.alpha, M, K, "alpha");

  // Every block consumes its random numbers whether or not it is pinned, so
  // pinning one block never changes the draws of another.
  auto draw_matrix = [&](Eigen::Index rows, Eigen::Index cols, auto&& gen) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = gen();
    return out;
  };
  auto half_cauchy = [&]() { return std::abs(std_cauchy(rng)); };
  auto gamma_draw = [&](double shape, double rate) {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    return dist(rng);
  };
  const double a_c = 0.5 * hp.nu, b_c = 0.5 * hp.nu * hp.s * hp.s;
  auto inv_gamma_draw = [&]() { return b_c / gamma_draw(a_c, 1.0); };
  auto pick = [](const auto& opt, auto drawn) {
    return opt ? static_cast<decltype(drawn)>(*opt) : drawn;
  };

  const Eigen::VectorXd rho =
      pick(fixed.rho, Eigen::VectorXd(draw_matrix(M, 1, [&] { return gamma_draw(hp.a_rho, hp.b_rho); })));

  ParamLayout layout(spec);
  ParamVector params = ParamVector::zeros(layout);
  Eigen::MatrixXd W(D, K), Z(K, N);

  if (spec.family == ModelFamily::SparseGfaRhs) {
    Eigen::VectorXd tau_w_draw(M);
    for (int m = 0; m < M; ++m)
      tau_w_draw[m] = tau0(spec.p0(m), spec.view_dims[m], N, rho[m]) * half_cauchy();
    const Eigen::VectorXd tau_w = pick(fixed.tau_w, tau_w_draw);
    const Eigen::MatrixXd lambda_w = pick(fixed.lambda_w, Eigen::MatrixXd(draw_matrix(D, K, half_cauchy)));
    const Eigen::MatrixXd c2_w = pick(fixed.c2_w, Eigen::MatrixXd(draw_matrix(M, K, inv_gamma_draw)));
    const Eigen::MatrixXd eps_w = draw_matrix(D, K, [&] { return std_normal(rng); });
    for (int k = 0; k < K; ++k) {
      int off = 0;
      for (int m = 0; m < M; ++m) {
        for (int j = off; j < off + spec.view_dims[m]; ++j)
          W(j, k) = eps_w(j, k) * regularized_scale(lambda_w(j, k), tau_w[m], c2_w(m, k));
        off += spec.view_dims[m];
      }
    }

    const Eigen::VectorXd tau_z = pick(fixed.tau_z, Eigen::VectorXd(draw_matrix(K, 1, half_cauchy)));
    const Eigen::MatrixXd lambda_z = pick(fixed.lambda_z, Eigen::MatrixXd(draw_matrix(K, N, half_cauchy)));
    const Eigen::VectorXd c2_z = pick(fixed.c2_z, Eigen::VectorXd(draw_matrix(K, 1, inv_gamma_draw)));
    const Eigen::MatrixXd eps_z = draw_matrix(K, N, [&] { return std_normal(rng); });
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k)
        Z(k, n) = eps_z(k, n) * regularized_scale(lambda_z(k, n), tau_z[k], c2_z[k]);

    auto put = [&](Block b, const Eigen::MatrixXd& v) {
      params.block(b) = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).array().log().matrix();
    };
    put(Block::LambdaW, lambda_w);
    put(Block::TauW, tau_w);
    put(Block::C2W, c2_w);
    put(Block::LambdaZ, lambda_z);
    put(Block::TauZ, tau_z);
    put(Block::C2Z, c2_z);
  } else {
    const Eigen::MatrixXd alpha = pick(
        fixed.alpha, Eigen::MatrixXd(draw_matrix(M, K, [&] { return gamma_draw(hp.a_alpha, hp.b_alpha); })));
    const Eigen::MatrixXd eps_w = draw_matrix(D, K, [&] { return std_normal(rng); });
    for (int k = 0; k < K; ++k) {
      int off = 0;
      for (int m = 0; m < M; ++m) {
        for (int j = off; j < off + spec.view_dims[m]; ++j)
          W(j, k) = eps_w(j, k) / std::sqrt(alpha(m, k));
        off += spec.view_dims[m];
      }
    }
    Z = draw_matrix(K, N, [&] { return std_normal(rng); });
    params.block(Block::Alpha) =
        Eigen::Map<const Eigen::VectorXd>(alpha.data(), alpha.size()).array().log().matrix();
  }
  if (fixed.W) W = *fixed.W;
  if (fixed.Z) Z = *fixed.Z;

  params.block(Block::W) = Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
  params.block(Block::Z) = Eigen::Map<const Eigen::VectorXd>(Z.data(), Z.size());
  params.block(Block::Rho) = rho.array().log().matrix();

  std::vector<Eigen::MatrixXd> views;
  const Eigen::MatrixXd mean = W * Z;
  int off = 0;
  for (int m = 0; m < M; ++m) {
    const int Dm = spec.view_dims[m];
    const double sd = 1.0 / std::sqrt(rho[m]);
    Eigen::MatrixXd X = mean.middleRows(off, Dm);
    for (Eigen::Index n = 0; n < X.cols(); ++n)
      for (Eigen::Index j = 0; j < X.rows(); ++j) X(j, n) += sd * std_normal(rng);
    views.push_back(std::move(X));
    off += Dm;
  }
  for (const auto& v : views)
    if (!v.allFinite())
      fail(ErrorKind::Numerical,
           "forward_sample: draws overflowed; the prior is too diffuse to simulate from");
  return {make_dataset(std::move(views)), std::move(params)};
}

}  // namespace sgfa
