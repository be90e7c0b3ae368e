#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sgfa {

class FactorModel;

/// A differentiable log density on R^dim. log_prob_grad writes the gradient
/// and returns the log density; a non-finite return marks an invalid point.
struct Target {
  std::size_t dim = 0;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> log_prob_grad;
  /// Optional coordinate naming, used in diagnostics and error messages.
  std::function<std::string(std::size_t)> coordinate_name;
  /// Optional map from sampling coordinates to the reported coordinates.
  /// Retained draws and initial points are stored after this map.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> to_output;
  /// Inverse of to_output, used to seed chains from reported coordinates.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> from_output;
};

enum class Parameterization { Centered, NonCentered };

/// Sampling target for a model. The non-centred form samples standardised
/// W and Z but reports draws in the model's centred layout.
Target make_target(const FactorModel& model,
                   Parameterization param = Parameterization::NonCentered);

struct SamplerConfig {
  int chains = 4;
  /// Warm-up iterations; discarded.
  int warmup = 1000;
  /// Total iterations per chain, warm-up included.
  int samples = 2500;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 20240101;
  /// Initial points are uniform(-init_jitter, init_jitter) per coordinate.
  double init_jitter = 2.0;
  /// Independent random initialisations; the best one is kept.
  int initializations = 5;
  /// Worker threads for chains; 0 picks the hardware concurrency.
  int threads = 0;
  /// Energy error beyond which a trajectory counts as divergent.
  double max_delta_h = 1000.0;

  int retained() const { return samples - warmup; }
  void validate() const;
};

using Rng = std::mt19937_64;

/// Deterministic per-(initialisation, chain) seed derived from the master seed.
std::uint64_t derive_seed(std::uint64_t master, int initialization, int chain);

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_prob = 0.0;
};

/// Evaluates log_prob and grad at z.q.
void refresh(PhasePoint& z, const Target& target);

/// Kinetic plus potential energy with a diagonal inverse metric.
double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_mass);

/// One velocity-Verlet step. Returns false if the new point is not finite;
/// that outcome is treated as a divergence by the caller.
bool leapfrog(PhasePoint& z, double step_size, const Eigen::VectorXd& inv_mass,
              const Target& target);

struct TransitionStats {
  double accept_stat = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  bool depth_saturated = false;
  double energy = 0.0;
};

/// One NUTS transition with multinomial sampling along the trajectory and
/// the generalised no-U-turn criterion. The momentum of `state` is resampled.
TransitionStats nuts_draw(PhasePoint& state, double step_size, const Eigen::VectorXd& inv_mass,
                          const Target& target, int max_tree_depth, Rng& rng,
                          double max_delta_h = 1000.0);

/// Dual averaging of the log step size.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double target_accept) : delta_(target_accept) {}
  void restart(double step_size);
  double learn(double accept_stat);
  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  int counter_ = 0;
};

/// Warm-up window boundaries (iteration indices at which the slow phase
/// windows end), following a 15% fast / doubling slow / 10% fast schedule.
struct WarmupSchedule {
  int init_buffer = 0;
  int term_buffer = 0;
  std::vector<int> window_ends;

  static WarmupSchedule make(int warmup);
  bool in_slow_phase(int iteration, int warmup) const;
};

struct WarmupResult {
  double step_size = 0.0;
  /// Diagonal inverse metric (posterior variance estimate).
  Eigen::VectorXd inv_mass;
  PhasePoint state;
  int divergences = 0;
};

/// Heuristic doubling/halving of the step size until a single leapfrog
/// step crosses an acceptance probability of 0.8.
double find_reasonable_step_size(const PhasePoint& state, double step_size,
                                 const Eigen::VectorXd& inv_mass, const Target& target, Rng& rng);

WarmupResult adapt_warmup(const SamplerConfig& config, const Target& target,
                          const Eigen::VectorXd& init, Rng& rng);

struct ChainResult {
  std::uint64_t seed = 0;
  /// Retained draws, one row per iteration, in reported coordinates.
  Eigen::MatrixXd draws;
  Eigen::VectorXd log_prob;
  Eigen::VectorXd accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  int divergences = 0;
  int warmup_divergences = 0;
  int depth_saturations = 0;
  /// Step size and inverse metric refer to the sampling coordinates.
  double step_size = 0.0;
  Eigen::VectorXd inv_mass;
  /// Initial point in reported coordinates.
  Eigen::VectorXd init;
};

struct PosteriorDraws {
  std::vector<ChainResult> chains;
  int selected_initialization = 0;
  /// Mean retained log joint across chains, per initialisation; NaN when the
  /// initialisation failed.
  std::vector<double> initialization_scores;
  std::vector<std::string> initialization_errors;

  std::size_t dimension() const;
  int retained() const;
};

/// Initial point for (initialisation, chain) in reported coordinates.
using Initializer = std::function<Eigen::VectorXd(int initialization, int chain, Rng& rng)>;

/// Runs a single chain: warm-up, then retained sampling. If `init` is empty,
/// a jittered starting point is drawn from the chain's rng.
ChainResult run_chain(const SamplerConfig& config, const Target& target, std::uint64_t seed,
                      const Eigen::VectorXd& init = Eigen::VectorXd());

/// The full multi-start protocol: for each initialisation run every chain,
/// score it by the mean retained log joint, keep the best.
PosteriorDraws run_chains(const Target& target, const SamplerConfig& config,
                          const Initializer& initializer = {});

struct ChainDiagnostics {
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess_bulk;
  /// Coordinates whose draws are constant (ESS and R-hat are undefined).
  std::vector<bool> degenerate;
  std::vector<int> divergences;
  double max_rhat = 0.0;
  double min_ess = 0.0;
};

/// Rank-normalised split R-hat of one coordinate given per-chain series.
/// Returns +inf for totally separated constant chains.
double split_rhat(const std::vector<Eigen::VectorXd>& chains);

/// Bulk effective sample size (rank-normalised, split chains).
double ess_bulk(const std::vector<Eigen::VectorXd>& chains);

ChainDiagnostics diagnostics(const PosteriorDraws& draws);

}  // namespace sgfa
