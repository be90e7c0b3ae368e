#include "sgfa/sampler.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>
#include <unsupported/Eigen/FFT>

#include "sgfa/error.hpp"
#include "sgfa/model.hpp"
#include "sgfa/stats.hpp"

namespace sgfa {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

void sample_momentum(PhasePoint& z, const Eigen::VectorXd& inv_mass, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  z.p.resize(z.q.size());
  for (Eigen::Index i = 0; i < z.q.size(); ++i) z.p[i] = normal(rng) / std::sqrt(inv_mass[i]);
}

bool uturn_free(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                const Eigen::VectorXd& rho) {
  return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
}

// Recursive trajectory builder. Mirrors the usual multinomial NUTS
// formulation: every subtree tracks its summed momentum (rho), the sharp
// momenta at both ends and the log sum of its state weights.
class TreeBuilder {
 public:
  TreeBuilder(const Target& target, const Eigen::VectorXd& inv_mass, double step_size,
              double H0, double max_delta_h, Rng& rng)
      : target_(target),
        inv_mass_(inv_mass),
        step_size_(step_size),
        H0_(H0),
        max_delta_h_(max_delta_h),
        rng_(rng) {}

  bool build(int depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
             Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
             Eigen::VectorXd& p_end, double sign, double& log_sum_weight) {
    if (depth == 0) {
      const bool ok = leapfrog(z, sign * step_size_, inv_mass_, target_);
      ++n_leapfrog;
      double h = ok ? hamiltonian(z, inv_mass_) : kInf;
      if (std::isnan(h)) h = kInf;
      if (h - H0_ > max_delta_h_) divergent = true;
      log_sum_weight = stats::log_sum_exp(log_sum_weight, H0_ - h);
      sum_metro_prob += H0_ - h > 0 ? 1.0 : std::exp(H0_ - h);
      z_propose = z;
      p_sharp_beg = inv_mass_.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent;
    }

    const auto n = z.q.size();
    double log_sum_weight_init = -kInf;
    Eigen::VectorXd p_init_end(n), p_sharp_init_end(n);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(n);
    if (!build(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
               p_init_end, sign, log_sum_weight_init))
      return false;

    PhasePoint z_propose_final = z;
    double log_sum_weight_final = -kInf;
    Eigen::VectorXd p_final_beg(n), p_sharp_final_beg(n);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(n);
    if (!build(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
               p_final_beg, p_end, sign, log_sum_weight_final))
      return false;

    const double log_sum_weight_subtree =
        stats::log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = stats::log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = uturn_free(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && uturn_free(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && uturn_free(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  int n_leapfrog = 0;
  double sum_metro_prob = 0.0;
  bool divergent = false;

 private:
  const Target& target_;
  const Eigen::VectorXd& inv_mass_;
  double step_size_;
  double H0_;
  double max_delta_h_;
  Rng& rng_;
};

struct Welford {
  Eigen::VectorXd mean, m2;
  int n = 0;

  void reset(Eigen::Index dim) {
    mean = Eigen::VectorXd::Zero(dim);
    m2 = Eigen::VectorXd::Zero(dim);
    n = 0;
  }
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / n;
    m2 += delta.cwiseProduct(x - mean);
  }
  // Sample variance shrunk toward 1e-3, as in common HMC implementations.
  Eigen::VectorXd regularized_variance() const {
    const double nn = n;
    const Eigen::VectorXd var = m2 / (nn - 1.0);
    return (nn / (nn + 5.0)) * var.array() + 1e-3 * (5.0 / (nn + 5.0));
  }
};

}  // namespace

Target make_target(const FactorModel& model, Parameterization param) {
  Target t;
  t.dim = model.dimension();
  t.coordinate_name = [&model](std::size_t i) { return model.layout().coordinate_name(i); };
  if (param == Parameterization::Centered) {
    t.log_prob_grad = [&model](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
      return model.log_density_grad(q, grad);
    };
    return t;
  }
  t.log_prob_grad = [&model](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
    return model.log_density_grad_noncentered(u, grad);
  };
  t.to_output = [&model](const Eigen::VectorXd& u) { return model.to_centered(u); };
  t.from_output = [&model](const Eigen::VectorXd& q) { return model.to_noncentered(q); };
  return t;
}

void SamplerConfig::validate() const {
  require(chains >= 1, ErrorKind::Config, "sampler: chains must be >= 1");
  require(warmup >= 1, ErrorKind::Config, "sampler: warmup must be >= 1");
  require(samples > warmup, ErrorKind::Config,
          "sampler: samples (total iterations) must exceed warmup");
  require(target_accept > 0.0 && target_accept < 1.0, ErrorKind::Config,
          "sampler: target_accept must lie in (0, 1)");
  require(max_tree_depth >= 1, ErrorKind::Config, "sampler: max_tree_depth must be >= 1");
  require(init_jitter >= 0.0, ErrorKind::Config, "sampler: init_jitter must be >= 0");
  require(initializations >= 1, ErrorKind::Config, "sampler: initializations must be >= 1");
  require(threads >= 0, ErrorKind::Config, "sampler: threads must be >= 0");
  require(max_delta_h > 0.0, ErrorKind::Config, "sampler: max_delta_h must be positive");
}

std::uint64_t derive_seed(std::uint64_t master, int initialization, int chain) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ (static_cast<std::uint64_t>(initialization) + 0x1000003ULL));
  s = splitmix64(s ^ (static_cast<std::uint64_t>(chain) + 0x2000005ULL));
  return s;
}

void refresh(PhasePoint& z, const Target& target) {
  z.log_prob = target.log_prob_grad(z.q, z.grad);
}

double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_mass) {
  return -z.log_prob + 0.5 * z.p.cwiseProduct(inv_mass).dot(z.p);
}

bool leapfrog(PhasePoint& z, double step_size, const Eigen::VectorXd& inv_mass,
              const Target& target) {
  z.p += 0.5 * step_size * z.grad;
  z.q += step_size * inv_mass.cwiseProduct(z.p);
  refresh(z, target);
  z.p += 0.5 * step_size * z.grad;
  return std::isfinite(z.log_prob) && z.grad.allFinite() && z.q.allFinite();
}

TransitionStats nuts_draw(PhasePoint& state, double step_size, const Eigen::VectorXd& inv_mass,
                          const Target& target, int max_tree_depth, Rng& rng,
                          double max_delta_h) {
  sample_momentum(state, inv_mass, rng);
  const double H0 = hamiltonian(state, inv_mass);
  const auto n = state.q.size();

  PhasePoint z = state;
  PhasePoint z_fwd = state, z_bck = state, z_sample = state, z_propose = state;

  Eigen::VectorXd p_fwd_fwd = state.p, p_sharp_fwd_fwd = inv_mass.cwiseProduct(state.p);
  Eigen::VectorXd p_fwd_bck = p_fwd_fwd, p_sharp_fwd_bck = p_sharp_fwd_fwd;
  Eigen::VectorXd p_bck_fwd = p_fwd_fwd, p_sharp_bck_fwd = p_sharp_fwd_fwd;
  Eigen::VectorXd p_bck_bck = p_fwd_fwd, p_sharp_bck_bck = p_sharp_fwd_fwd;
  Eigen::VectorXd rho = state.p;

  double log_sum_weight = 0.0;
  TreeBuilder builder(target, inv_mass, step_size, H0, max_delta_h, rng);
  TransitionStats st;

  while (st.tree_depth < max_tree_depth) {
    Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n), rho_bck = Eigen::VectorXd::Zero(n);
    bool valid = false;
    double log_sum_weight_subtree = -kInf;

    if (uniform01(rng) > 0.5) {
      z = z_fwd;
      rho_bck = rho;
      p_bck_fwd = p_fwd_bck;
      p_sharp_bck_fwd = p_sharp_fwd_bck;
      valid = builder.build(st.tree_depth, z, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd,
                            rho_fwd, p_fwd_bck, p_fwd_fwd, 1.0, log_sum_weight_subtree);
      z_fwd = z;
    } else {
      z = z_bck;
      rho_fwd = rho;
      p_fwd_bck = p_bck_fwd;
      p_sharp_fwd_bck = p_sharp_bck_fwd;
      valid = builder.build(st.tree_depth, z, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck,
                            rho_bck, p_bck_fwd, p_bck_bck, -1.0, log_sum_weight_subtree);
      z_bck = z;
    }
    if (!valid) break;

    ++st.tree_depth;
    if (log_sum_weight_subtree > log_sum_weight) {
      z_sample = z_propose;
    } else if (uniform01(rng) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
      z_sample = z_propose;
    }
    log_sum_weight = stats::log_sum_exp(log_sum_weight, log_sum_weight_subtree);

    rho = rho_bck + rho_fwd;
    bool persist = uturn_free(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
    persist = persist && uturn_free(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
    persist = persist && uturn_free(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
    if (!persist) break;
  }

  st.n_leapfrog = builder.n_leapfrog;
  st.divergent = builder.divergent;
  st.depth_saturated = st.tree_depth >= max_tree_depth;
  st.accept_stat = builder.n_leapfrog > 0 ? builder.sum_metro_prob / builder.n_leapfrog : 0.0;
  state = z_sample;
  st.energy = hamiltonian(state, inv_mass);
  return st;
}

void StepSizeAdapter::restart(double step_size) {
  mu_ = std::log(10.0 * step_size);
  s_bar_ = 0.0;
  x_bar_ = 0.0;
  counter_ = 0;
}

double StepSizeAdapter::learn(double accept_stat) {
  constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  ++counter_;
  accept_stat = std::min(1.0, accept_stat);
  const double eta = 1.0 / (counter_ + t0);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
  const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma;
  const double x_eta = std::pow(static_cast<double>(counter_), -kappa);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
  return std::exp(x);
}

WarmupSchedule WarmupSchedule::make(int warmup) {
  require(warmup >= 20, ErrorKind::Config, "warm-up needs at least 20 iterations");
  WarmupSchedule s;
  s.init_buffer = static_cast<int>(0.15 * warmup);
  s.term_buffer = static_cast<int>(0.10 * warmup);
  const int slow_end = warmup - s.term_buffer;
  int start = s.init_buffer;
  int size = 25;
  while (start < slow_end) {
    int end = start + size;
    if (end + 2 * size > slow_end) end = slow_end;
    s.window_ends.push_back(end);
    start = end;
    size *= 2;
  }
  return s;
}

bool WarmupSchedule::in_slow_phase(int iteration, int warmup) const {
  return iteration >= init_buffer && iteration < warmup - term_buffer;
}

double find_reasonable_step_size(const PhasePoint& state, double step_size,
                                 const Eigen::VectorXd& inv_mass, const Target& target,
                                 Rng& rng) {
  const double log_threshold = std::log(0.8);
  auto trial = [&](double eps) {
    PhasePoint z = state;
    sample_momentum(z, inv_mass, rng);
    const double H0 = hamiltonian(z, inv_mass);
    const bool ok = leapfrog(z, eps, inv_mass, target);
    double h = ok ? hamiltonian(z, inv_mass) : kInf;
    if (std::isnan(h)) h = kInf;
    return H0 - h;
  };
  const int direction = trial(step_size) > log_threshold ? 1 : -1;
  for (int iter = 0; iter < 100; ++iter) {
    const double delta_h = trial(step_size);
    if (direction == 1 && !(delta_h > log_threshold)) break;
    if (direction == -1 && !(delta_h < log_threshold)) break;
    step_size = direction == 1 ? 2.0 * step_size : 0.5 * step_size;
    if (step_size > 1e7)
      fail(ErrorKind::Adaptation, "step size search diverged: posterior appears improper");
    if (step_size < 1e-300)
      fail(ErrorKind::Adaptation, "step size search collapsed to zero");
  }
  return step_size;
}

namespace {

std::string worst_coordinate(const Target& target, const PhasePoint& z,
                             const Eigen::VectorXd& inv_mass) {
  Eigen::Index worst = 0;
  double worst_val = -1.0;
  for (Eigen::Index i = 0; i < z.grad.size(); ++i) {
    const double v = std::isfinite(z.grad[i]) ? std::abs(z.grad[i]) * std::sqrt(inv_mass[i])
                                              : kInf;
    if (v > worst_val) {
      worst_val = v;
      worst = i;
    }
  }
  if (target.coordinate_name) return target.coordinate_name(static_cast<std::size_t>(worst));
  return "coordinate " + std::to_string(worst);
}

PhasePoint initial_point(const Target& target, const Eigen::VectorXd& init) {
  PhasePoint z;
  z.q = init;
  refresh(z, target);
  if (!std::isfinite(z.log_prob) || !z.grad.allFinite())
    fail(ErrorKind::Numerical, "initial point has a non-finite log density or gradient");
  return z;
}

Eigen::VectorXd jittered_init(const Target& target, double jitter, Rng& rng) {
  std::uniform_real_distribution<double> u(-jitter, jitter);
  Eigen::VectorXd grad;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::VectorXd q(static_cast<Eigen::Index>(target.dim));
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = jitter > 0.0 ? u(rng) : 0.0;
    const double lp = target.log_prob_grad(q, grad);
    if (std::isfinite(lp) && grad.allFinite()) return q;
  }
  fail(ErrorKind::Numerical, "could not find a finite initial point in 100 attempts");
}

}  // namespace

WarmupResult adapt_warmup(const SamplerConfig& config, const Target& target,
                          const Eigen::VectorXd& init, Rng& rng) {
  config.validate();
  const WarmupSchedule schedule = WarmupSchedule::make(config.warmup);
  const auto dim = static_cast<Eigen::Index>(target.dim);

  WarmupResult out;
  out.inv_mass = Eigen::VectorXd::Ones(dim);
  out.state = initial_point(target, init);
  auto search = [&](double eps) {
    try {
      return find_reasonable_step_size(out.state, eps, out.inv_mass, target, rng);
    } catch (const Error& e) {
      fail(ErrorKind::Adaptation, std::string(e.what()) + "; worst coordinate " +
                                      worst_coordinate(target, out.state, out.inv_mass));
    }
  };
  double step_size = search(1.0);

  StepSizeAdapter adapter(config.target_accept);
  adapter.restart(step_size);
  Welford welford;
  welford.reset(dim);
  std::size_t next_window = 0;

  for (int it = 0; it < config.warmup; ++it) {
    const TransitionStats st = nuts_draw(out.state, step_size, out.inv_mass, target,
                                         config.max_tree_depth, rng, config.max_delta_h);
    if (st.divergent) ++out.divergences;
    step_size = adapter.learn(st.accept_stat);

    if (schedule.in_slow_phase(it, config.warmup)) welford.add(out.state.q);
    if (next_window < schedule.window_ends.size() &&
        it + 1 == schedule.window_ends[next_window]) {
      out.inv_mass = welford.regularized_variance();
      welford.reset(dim);
      ++next_window;
      step_size = search(step_size);
      adapter.restart(step_size);
    }
  }

  if (out.divergences > 0.9 * config.warmup) {
    std::ostringstream os;
    os << "adaptation failed: " << out.divergences << " of " << config.warmup
       << " warm-up transitions diverged; worst coordinate "
       << worst_coordinate(target, out.state, out.inv_mass);
    fail(ErrorKind::Adaptation, os.str());
  }
  out.step_size = adapter.final_step_size();
  return out;
}

ChainResult run_chain(const SamplerConfig& config, const Target& target, std::uint64_t seed,
                      const Eigen::VectorXd& init) {
  config.validate();
  Rng rng(seed);
  ChainResult res;
  res.seed = seed;
  Eigen::VectorXd start;
  if (init.size() > 0) {
    if (static_cast<std::size_t>(init.size()) != target.dim)
      fail(ErrorKind::Shape, "initial point has the wrong dimension");
    start = target.from_output ? target.from_output(init) : init;
  } else {
    start = jittered_init(target, config.init_jitter, rng);
  }
  res.init = target.to_output ? target.to_output(start) : start;

  WarmupResult warm = adapt_warmup(config, target, start, rng);
  res.step_size = warm.step_size;
  res.inv_mass = warm.inv_mass;
  res.warmup_divergences = warm.divergences;

  const int kept = config.retained();
  const auto dim = static_cast<Eigen::Index>(target.dim);
  res.draws.resize(kept, dim);
  res.log_prob.resize(kept);
  res.accept_stat.resize(kept);
  res.tree_depth.reserve(kept);
  res.n_leapfrog.reserve(kept);

  PhasePoint state = std::move(warm.state);
  for (int it = 0; it < kept; ++it) {
    const TransitionStats st = nuts_draw(state, res.step_size, res.inv_mass, target,
                                         config.max_tree_depth, rng, config.max_delta_h);
    res.draws.row(it) =
        target.to_output ? target.to_output(state.q).transpose() : state.q.transpose();
    res.log_prob[it] = state.log_prob;
    res.accept_stat[it] = st.accept_stat;
    res.tree_depth.push_back(st.tree_depth);
    res.n_leapfrog.push_back(st.n_leapfrog);
    if (st.divergent) ++res.divergences;
    if (st.depth_saturated) ++res.depth_saturations;
  }
  return res;
}

std::size_t PosteriorDraws::dimension() const {
  return chains.empty() ? 0 : static_cast<std::size_t>(chains.front().draws.cols());
}

int PosteriorDraws::retained() const {
  return chains.empty() ? 0 : static_cast<int>(chains.front().draws.rows());
}

PosteriorDraws run_chains(const Target& target, const SamplerConfig& config,
                          const Initializer& initializer) {
  config.validate();
  const int workers = config.threads > 0
                          ? config.threads
                          : std::max(1u, std::thread::hardware_concurrency());

  PosteriorDraws best;
  double best_score = -kInf;
  bool have_best = false;
  std::vector<double> scores;
  std::vector<std::string> errors;

  for (int r = 0; r < config.initializations; ++r) {
    std::vector<ChainResult> chains(config.chains);
    std::vector<std::string> chain_errors(config.chains);

    auto work = [&](int c) {
      try {
        const std::uint64_t seed = derive_seed(config.seed, r, c);
        Eigen::VectorXd init;
        if (initializer) {
          Rng init_rng(splitmix64(seed));
          init = initializer(r, c, init_rng);
        }
        chains[c] = run_chain(config, target, seed, init);
      } catch (const std::exception& e) {
        chain_errors[c] = e.what();
      }
    };
    if (workers == 1 || config.chains == 1) {
      for (int c = 0; c < config.chains; ++c) work(c);
    } else {
      for (int first = 0; first < config.chains; first += workers) {
        std::vector<std::jthread> pool;
        for (int c = first; c < std::min(config.chains, first + workers); ++c)
          pool.emplace_back(work, c);
      }
    }

    std::string err;
    for (int c = 0; c < config.chains; ++c)
      if (!chain_errors[c].empty())
        err += "chain " + std::to_string(c) + ": " + chain_errors[c] + "; ";
    if (!err.empty()) {
      scores.push_back(std::numeric_limits<double>::quiet_NaN());
      errors.push_back(err);
      continue;
    }
    double score = 0.0;
    for (const auto& ch : chains) score += ch.log_prob.mean();
    score /= config.chains;
    scores.push_back(score);
    errors.emplace_back();
    if (!have_best || score > best_score) {
      have_best = true;
      best_score = score;
      best.chains = std::move(chains);
      best.selected_initialization = r;
    }
  }

  if (!have_best) {
    std::string all;
    for (std::size_t r = 0; r < errors.size(); ++r)
      all += "[init " + std::to_string(r) + "] " + errors[r];
    fail(ErrorKind::Adaptation, "every initialisation failed: " + all);
  }
  best.initialization_scores = std::move(scores);
  best.initialization_errors = std::move(errors);
  return best;
}

namespace {

// Split each chain in half (dropping the middle draw of odd lengths).
std::vector<Eigen::VectorXd> split_chains(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

// Pooled fractional ranks mapped through the normal quantile function.
std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (Eigen::Index i = 0; i < chains[c].size(); ++i)
      all.emplace_back(chains[c][i], c * chains[c].size() + static_cast<std::size_t>(i));
  std::sort(all.begin(), all.end());
  const double S = static_cast<double>(all.size());
  std::vector<double> rank(all.size());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) rank[all[k].second] = avg;
    i = j;
  }
  const boost::math::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> out;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    Eigen::VectorXd z(chains[c].size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      z[i] = boost::math::quantile(
          normal, (rank[c * chains[c].size() + static_cast<std::size_t>(i)] - 0.375) / (S + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

struct VarianceParts {
  double within = 0.0;
  double var_plus = 0.0;
};

VarianceParts variance_parts(const std::vector<Eigen::VectorXd>& chains) {
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  Eigen::VectorXd means(chains.size());
  double within = 0.0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means[static_cast<Eigen::Index>(c)] = chains[c].mean();
    within += (chains[c].array() - chains[c].mean()).square().sum() / (n - 1.0);
  }
  within /= m;
  const double between =
      m > 1 ? n * (means.array() - means.mean()).square().sum() / (m - 1.0) : 0.0;
  return {within, (n - 1.0) / n * within + between / n};
}

Eigen::VectorXd autocovariance(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::Index len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> buf(static_cast<std::size_t>(len), 0.0);
  const double mean = x.mean();
  for (Eigen::Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = x[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, buf);
  for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> ac;
  fft.inv(ac, freq);
  Eigen::VectorXd out(n);
  for (Eigen::Index t = 0; t < n; ++t) out[t] = ac[static_cast<std::size_t>(t)] / n;
  return out;
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  require(!chains.empty() && chains.front().size() >= 4, ErrorKind::InvalidArgument,
          "split_rhat: need at least 4 draws per chain");
  const auto z = rank_normalize(split_chains(chains));
  const VarianceParts v = variance_parts(z);
  if (v.within <= 0.0) return v.var_plus > 0.0 ? kInf : 1.0;
  return std::sqrt(v.var_plus / v.within);
}

double ess_bulk(const std::vector<Eigen::VectorXd>& chains) {
  require(!chains.empty() && chains.front().size() >= 4, ErrorKind::InvalidArgument,
          "ess_bulk: need at least 4 draws per chain");
  const auto z = rank_normalize(split_chains(chains));
  const auto m = z.size();
  const Eigen::Index n = z.front().size();
  const double total = static_cast<double>(m) * n;

  const VarianceParts v = variance_parts(z);
  if (v.within <= 0.0) return 1.0;

  Eigen::VectorXd mean_acov = Eigen::VectorXd::Zero(n);
  for (const auto& c : z) mean_acov += autocovariance(c);
  mean_acov /= static_cast<double>(m);

  // Geyer's initial monotone sequence on the combined autocorrelations.
  Eigen::VectorXd rho_hat = Eigen::VectorXd::Zero(n + 2);
  auto rho_at = [&](Eigen::Index t) { return 1.0 - (v.within - mean_acov[t]) / v.var_plus; };
  double rho_even = 1.0;
  double rho_odd = n > 1 ? rho_at(1) : 0.0;
  rho_hat[0] = rho_even;
  rho_hat[1] = rho_odd;
  Eigen::Index s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(s + 1);
    rho_odd = rho_at(s + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho_hat[s + 1] = rho_even;
      rho_hat[s + 2] = rho_odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (rho_even > 0.0) rho_hat[max_s + 1] = rho_even;
  for (Eigen::Index t = 1; t <= max_s - 3; t += 2) {
    if (rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]) {
      rho_hat[t + 1] = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
      rho_hat[t + 2] = rho_hat[t + 1];
    }
  }
  const double tau = -1.0 + 2.0 * rho_hat.head(max_s).sum() + rho_hat[max_s + 1];
  const double ess = tau > 0.0 ? total / tau : total;
  return std::clamp(ess, 1.0, total);
}

ChainDiagnostics diagnostics(const PosteriorDraws& draws) {
  require(draws.chains.size() >= 2, ErrorKind::InvalidArgument,
          "diagnostics: need at least 2 chains");
  require(draws.retained() >= 4, ErrorKind::InvalidArgument,
          "diagnostics: need at least 4 retained draws per chain");
  const auto dim = static_cast<Eigen::Index>(draws.dimension());
  ChainDiagnostics d;
  d.rhat.resize(dim);
  d.ess_bulk.resize(dim);
  d.degenerate.assign(static_cast<std::size_t>(dim), false);
  for (const auto& c : draws.chains) d.divergences.push_back(c.divergences);

  std::vector<Eigen::VectorXd> series(draws.chains.size());
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (std::size_t c = 0; c < draws.chains.size(); ++c) series[c] = draws.chains[c].draws.col(i);
    d.rhat[i] = split_rhat(series);
    const auto z = rank_normalize(split_chains(series));
    const bool degenerate = variance_parts(z).within <= 0.0;
    d.degenerate[static_cast<std::size_t>(i)] = degenerate;
    d.ess_bulk[i] = ess_bulk(series);
  }
  d.max_rhat = dim > 0 ? d.rhat.maxCoeff() : 1.0;
  d.min_ess = dim > 0 ? d.ess_bulk.minCoeff() : 0.0;
  return d;
}

}  // namespace sgfa
