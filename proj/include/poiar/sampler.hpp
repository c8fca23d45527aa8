#pragma once

// Multinomial No-U-Turn sampler with a diagonal metric, dual-averaging step
// size and windowed variance adaptation. Chains run on their own threads.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace poiar {

class Rng;

// Writes ∇ log p(z) into grad and returns log p(z). −∞ marks an invalid point.
using LogDensityFn = std::function<double(std::span<const double> z, std::span<double> grad)>;
// Called once per chain so each chain owns its evaluation workspace.
using TargetFactory = std::function<LogDensityFn()>;

struct NutsConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_iter = 1000;  // post-warmup iterations per chain
  int thin = 1;
  double target_accept = 0.8;
  int max_treedepth = 10;
  std::uint64_t seed = 1;
  double init_radius = 2.0;
  int init_retries = 100;
  bool parallel = true;
  // Optional fixed starting point (skips jittering).
  std::optional<Eigen::VectorXd> init;

  void validate() const;
};

struct ChainTelemetry {
  std::int64_t divergences = 0;          // post-warmup
  std::int64_t warmup_divergences = 0;
  std::int64_t treedepth_saturations = 0;  // post-warmup
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  double mean_accept_stat = 0.0;  // post-warmup
  std::int64_t leapfrog_steps = 0;
  // Per kept draw.
  std::vector<int> tree_depth;
  std::vector<double> accept_stat;
  std::vector<std::uint8_t> divergent;
  std::vector<double> energy;
};

struct Draws {
  std::size_t dim = 0;
  std::vector<Eigen::MatrixXd> chains;  // n_draws × dim, unconstrained
  std::vector<Eigen::VectorXd> lp;      // per chain, per draw
  std::vector<ChainTelemetry> telemetry;
  // Filled by the caller when needed: per chain, n_draws × n_cells.
  std::vector<Eigen::MatrixXd> log_lik;

  std::size_t n_chains() const { return chains.size(); }
  std::size_t draws_per_chain() const { return chains.empty() ? 0 : chains.front().rows(); }
  std::int64_t total_divergences() const;
  std::int64_t total_treedepth_saturations() const;
  // All chains stacked, (n_chains·n_draws) × dim.
  Eigen::MatrixXd stacked() const;
};

// Phase-space point. inv_metric is the diagonal of M⁻¹.
struct PhasePoint {
  Eigen::VectorXd z, p, grad;
  double lp = 0.0;
};

double kinetic_energy(const PhasePoint& s, const Eigen::VectorXd& inv_metric);
inline double hamiltonian(const PhasePoint& s, const Eigen::VectorXd& inv_metric) {
  return -s.lp + kinetic_energy(s, inv_metric);
}

// One velocity-Verlet step of size eps (negative eps integrates backwards).
void leapfrog(PhasePoint& s, double eps, const Eigen::VectorXd& inv_metric, LogDensityFn& target);

// Dual averaging of log step size towards a target acceptance statistic.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double delta = 0.8) : delta_(delta) {}
  void set_mu(double mu) { mu_ = mu; }
  void restart();
  // Returns the step size to use next.
  double learn(double accept_stat);
  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double mu_ = 0.0;
  double gamma_ = 0.05, kappa_ = 0.75, t0_ = 10.0;
  double counter_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
};

// Windowed warmup schedule: an initial fast buffer, doubling slow windows in
// which variances are collected, and a final fast buffer.
class MetricAdapter {
 public:
  MetricAdapter(std::size_t dim, int n_warmup);
  // Feeds the current position. Returns true at the end of a slow window, in
  // which case inv_metric holds the new regularized variances.
  bool learn(const Eigen::VectorXd& z, Eigen::VectorXd& inv_metric);

  int init_buffer() const { return init_buffer_; }
  int term_buffer() const { return term_buffer_; }
  int base_window() const { return base_window_; }

 private:
  bool in_window() const;
  bool end_of_window() const;
  void next_window();

  int n_warmup_;
  int init_buffer_ = 75, term_buffer_ = 50, base_window_ = 25;
  int counter_ = 0, window_size_ = 0, next_window_end_ = 0;
  bool enabled_ = true;
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

struct TransitionInfo {
  int depth = 0;
  int n_leapfrog = 0;
  double accept_stat = 0.0;
  bool divergent = false;
  double energy = 0.0;
};

// One NUTS transition from `state` (momentum resampled inside).
TransitionInfo nuts_transition(PhasePoint& state, double eps, const Eigen::VectorXd& inv_metric,
                               int max_depth, LogDensityFn& target, Rng& rng);

// Heuristic initial step size: double or halve until the one-step acceptance
// crosses 0.8.
double init_step_size(const PhasePoint& state, double eps, const Eigen::VectorXd& inv_metric,
                      LogDensityFn& target, Rng& rng);

// Runs one chain; used by nuts_sample.
void run_chain(LogDensityFn target, std::size_t dim, const NutsConfig& config, int chain,
               Eigen::MatrixXd& draws, Eigen::VectorXd& lp, ChainTelemetry& telemetry);

Draws nuts_sample(const TargetFactory& factory, std::size_t dim, const NutsConfig& config);

}  // namespace poiar
