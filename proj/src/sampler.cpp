#include "poiar/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <thread>

#include "poiar/error.hpp"
#include "poiar/rng.hpp"
#include "poiar/simd.hpp"

namespace poiar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Generalized no-U-turn check on the momentum sum rho between two ends.
bool no_u_turn(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
               const Eigen::VectorXd& rho) {
  return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
}

void sample_momentum(PhasePoint& s, const Eigen::VectorXd& inv_metric, Rng& rng) {
  for (Eigen::Index i = 0; i < s.p.size(); ++i) s.p[i] = rng.normal() / std::sqrt(inv_metric[i]);
}

double evaluate(PhasePoint& s, LogDensityFn& target) {
  s.lp = target({s.z.data(), std::size_t(s.z.size())}, {s.grad.data(), std::size_t(s.grad.size())});
  return s.lp;
}

struct TreeBuilder {
  LogDensityFn& target;
  const Eigen::VectorXd& inv_metric;
  Rng& rng;
  double eps;
  double h0;
  PhasePoint z;  // integrator state at the growing end
  int n_leapfrog = 0;
  double sum_metro_prob = 0.0;
  bool divergent = false;

  Eigen::VectorXd sharp(const Eigen::VectorXd& p) const { return inv_metric.cwiseProduct(p); }

  bool build(int depth, PhasePoint& propose, Eigen::VectorXd& p_sharp_beg,
             Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
             Eigen::VectorXd& p_end, int sign, double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(z, sign * eps, inv_metric, target);
      ++n_leapfrog;
      double h = hamiltonian(z, inv_metric);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > kMaxDeltaH) divergent = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      propose = z;
      p_sharp_beg = sharp(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent;
    }
    const auto n = z.z.size();
    double lsw_init = -kInf;
    Eigen::VectorXd p_init_end(n), p_sharp_init_end(n);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(n);
    if (!build(depth - 1, propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, sign,
               lsw_init))
      return false;

    PhasePoint propose_final = z;
    double lsw_final = -kInf;
    Eigen::VectorXd p_final_beg(n), p_sharp_final_beg(n);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(n);
    if (!build(depth - 1, propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg,
               p_end, sign, lsw_final))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      propose = std::move(propose_final);
    } else if (rng.uniform() < std::exp(lsw_final - lsw_subtree)) {
      propose = std::move(propose_final);
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }
};

}  // namespace

void NutsConfig::validate() const {
  if (n_chains < 1) throw ValidationError("n_chains must be >= 1");
  if (n_warmup < 0) throw ValidationError("n_warmup must be >= 0");
  if (n_iter < 1) throw ValidationError("n_iter must be >= 1");
  if (thin < 1) throw ValidationError("thin must be >= 1");
  if (n_iter < thin) throw ValidationError("n_iter must be >= thin");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ValidationError("target_accept must lie in (0, 1)");
  if (max_treedepth < 1) throw ValidationError("max_treedepth must be >= 1");
  if (init_retries < 1) throw ValidationError("init_retries must be >= 1");
}

std::int64_t Draws::total_divergences() const {
  std::int64_t n = 0;
  for (const auto& t : telemetry) n += t.divergences;
  return n;
}

std::int64_t Draws::total_treedepth_saturations() const {
  std::int64_t n = 0;
  for (const auto& t : telemetry) n += t.treedepth_saturations;
  return n;
}

Eigen::MatrixXd Draws::stacked() const {
  const auto per = static_cast<Eigen::Index>(draws_per_chain());
  Eigen::MatrixXd out(per * static_cast<Eigen::Index>(chains.size()), dim);
  for (std::size_t c = 0; c < chains.size(); ++c) out.middleRows(per * c, per) = chains[c];
  return out;
}

double kinetic_energy(const PhasePoint& s, const Eigen::VectorXd& inv_metric) {
  return 0.5 * (s.p.array().square() * inv_metric.array()).sum();
}

void leapfrog(PhasePoint& s, double eps, const Eigen::VectorXd& inv_metric, LogDensityFn& target) {
  const auto n = static_cast<std::size_t>(s.z.size());
  const auto& k = simd::active();
  k.axpy(0.5 * eps, s.grad.data(), s.p.data(), n);
  k.scaled_axpy(eps, inv_metric.data(), s.p.data(), s.z.data(), n);
  evaluate(s, target);
  k.axpy(0.5 * eps, s.grad.data(), s.p.data(), n);
}

void StepSizeAdapter::restart() {
  counter_ = 0.0;
  s_bar_ = 0.0;
  x_bar_ = 0.0;
}

double StepSizeAdapter::learn(double accept_stat) {
  ++counter_;
  accept_stat = std::min(1.0, accept_stat);
  const double eta = 1.0 / (counter_ + t0_);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
  const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
  const double x_eta = std::pow(counter_, -kappa_);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
  return std::exp(x);
}

MetricAdapter::MetricAdapter(std::size_t dim, int n_warmup)
    : n_warmup_(n_warmup), mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {
  if (n_warmup < 20) {
    enabled_ = false;
    return;
  }
  if (init_buffer_ + base_window_ + term_buffer_ > n_warmup) {
    init_buffer_ = static_cast<int>(0.15 * n_warmup);
    term_buffer_ = static_cast<int>(0.1 * n_warmup);
    base_window_ = n_warmup - (init_buffer_ + term_buffer_);
  }
  window_size_ = base_window_;
  next_window_end_ = init_buffer_ + window_size_ - 1;
}

bool MetricAdapter::in_window() const {
  return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ && counter_ != n_warmup_;
}

bool MetricAdapter::end_of_window() const {
  return counter_ == next_window_end_ && counter_ != n_warmup_;
}

void MetricAdapter::next_window() {
  const int last = n_warmup_ - term_buffer_ - 1;
  if (next_window_end_ == last) return;
  window_size_ *= 2;
  next_window_end_ = counter_ + window_size_;
  if (next_window_end_ != last && next_window_end_ + 2 * window_size_ >= n_warmup_ - term_buffer_)
    next_window_end_ = last;
}

bool MetricAdapter::learn(const Eigen::VectorXd& z, Eigen::VectorXd& inv_metric) {
  if (!enabled_) return false;
  if (in_window()) {
    ++n_;
    const Eigen::VectorXd delta = z - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(z - mean_);
  }
  if (end_of_window()) {
    next_window();
    const double n = static_cast<double>(n_);
    if (n_ > 1) {
      const Eigen::VectorXd var = m2_ / (n - 1.0);
      inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
    }
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
    ++counter_;
    return true;
  }
  ++counter_;
  return false;
}

TransitionInfo nuts_transition(PhasePoint& state, double eps, const Eigen::VectorXd& inv_metric,
                               int max_depth, LogDensityFn& target, Rng& rng) {
  sample_momentum(state, inv_metric, rng);
  TreeBuilder tb{target, inv_metric, rng, eps, hamiltonian(state, inv_metric), state};
  const auto n = state.z.size();

  PhasePoint z_fwd = state, z_bwd = state, z_sample = state, z_propose = state;
  Eigen::VectorXd p_fwd_fwd = state.p, p_fwd_bwd = state.p, p_bwd_fwd = state.p,
                  p_bwd_bwd = state.p;
  const Eigen::VectorXd p_sharp0 = tb.sharp(state.p);
  Eigen::VectorXd ps_fwd_fwd = p_sharp0, ps_fwd_bwd = p_sharp0, ps_bwd_fwd = p_sharp0,
                  ps_bwd_bwd = p_sharp0;
  Eigen::VectorXd rho = state.p;
  double log_sum_weight = 0.0;
  int depth = 0;

  while (depth < max_depth) {
    Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n), rho_bwd = Eigen::VectorXd::Zero(n);
    double lsw_subtree = -kInf;
    bool valid;
    if (rng.uniform() > 0.5) {
      tb.z = z_fwd;
      rho_bwd = rho;
      p_bwd_fwd = p_fwd_bwd;
      ps_bwd_fwd = ps_fwd_bwd;
      valid = tb.build(depth, z_propose, ps_fwd_bwd, ps_fwd_fwd, rho_fwd, p_fwd_bwd, p_fwd_fwd, 1,
                       lsw_subtree);
      z_fwd = tb.z;
    } else {
      tb.z = z_bwd;
      rho_fwd = rho;
      p_fwd_bwd = p_bwd_fwd;
      ps_fwd_bwd = ps_bwd_fwd;
      valid = tb.build(depth, z_propose, ps_bwd_fwd, ps_bwd_bwd, rho_bwd, p_bwd_fwd, p_bwd_bwd, -1,
                       lsw_subtree);
      z_bwd = tb.z;
    }
    if (!valid) break;
    ++depth;

    if (lsw_subtree > log_sum_weight) {
      z_sample = z_propose;
    } else if (rng.uniform() < std::exp(lsw_subtree - log_sum_weight)) {
      z_sample = z_propose;
    }
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

    rho = rho_bwd + rho_fwd;
    bool persist = no_u_turn(ps_bwd_bwd, ps_fwd_fwd, rho);
    persist = persist && no_u_turn(ps_bwd_bwd, ps_fwd_bwd, rho_bwd + p_fwd_bwd);
    persist = persist && no_u_turn(ps_bwd_fwd, ps_fwd_fwd, rho_fwd + p_bwd_fwd);
    if (!persist) break;
  }

  TransitionInfo info;
  info.depth = depth;
  info.n_leapfrog = tb.n_leapfrog;
  info.accept_stat = tb.n_leapfrog > 0 ? tb.sum_metro_prob / tb.n_leapfrog : 0.0;
  info.divergent = tb.divergent;
  state = std::move(z_sample);
  info.energy = hamiltonian(state, inv_metric);
  return info;
}

double init_step_size(const PhasePoint& state, double eps, const Eigen::VectorXd& inv_metric,
                      LogDensityFn& target, Rng& rng) {
  if (!(eps > 0.0) || eps > 1e7 || std::isnan(eps)) return eps;
  const double log_08 = std::log(0.8);
  auto one_step = [&](double e) {
    PhasePoint s = state;
    sample_momentum(s, inv_metric, rng);
    const double h0 = hamiltonian(s, inv_metric);
    leapfrog(s, e, inv_metric, target);
    double h = hamiltonian(s, inv_metric);
    if (std::isnan(h)) h = kInf;
    return h0 - h;
  };
  double delta_h = one_step(eps);
  const int direction = delta_h > log_08 ? 1 : -1;
  for (;;) {
    delta_h = one_step(eps);
    if (direction == 1 && !(delta_h > log_08)) break;
    if (direction == -1 && !(delta_h < log_08)) break;
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    if (eps > 1e7)
      throw NumericError("step size search diverged; the posterior may be improper");
    if (eps == 0.0)
      throw NumericError("step size search collapsed to zero; the posterior may be ill-defined");
  }
  return eps;
}

void run_chain(LogDensityFn target, std::size_t dim, const NutsConfig& config, int chain,
               Eigen::MatrixXd& draws, Eigen::VectorXd& lp, ChainTelemetry& tel) {
  Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(chain)), 0);
  PhasePoint state;
  state.z.resize(dim);
  state.p.setZero(dim);
  state.grad.resize(dim);

  bool ok = false;
  for (int attempt = 0; attempt < config.init_retries && !ok; ++attempt) {
    if (config.init && attempt == 0) {
      if (static_cast<std::size_t>(config.init->size()) != dim)
        throw ValidationError("initial point has the wrong dimension");
      state.z = *config.init;
    } else {
      for (std::size_t i = 0; i < dim; ++i)
        state.z[i] = rng.uniform(-config.init_radius, config.init_radius);
    }
    evaluate(state, target);
    ok = std::isfinite(state.lp) && state.grad.allFinite();
  }
  if (!ok)
    throw NumericError("chain " + std::to_string(chain) + ": no finite log density after " +
                       std::to_string(config.init_retries) + " initialization attempts");

  Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(dim);
  double eps = init_step_size(state, 1.0, inv_metric, target, rng);
  StepSizeAdapter stepper(config.target_accept);
  stepper.set_mu(std::log(10.0 * eps));
  MetricAdapter metric(dim, config.n_warmup);

  for (int it = 0; it < config.n_warmup; ++it) {
    const auto info = nuts_transition(state, eps, inv_metric, config.max_treedepth, target, rng);
    tel.leapfrog_steps += info.n_leapfrog;
    if (info.divergent) ++tel.warmup_divergences;
    eps = stepper.learn(info.accept_stat);
    if (metric.learn(state.z, inv_metric)) {
      eps = init_step_size(state, eps, inv_metric, target, rng);
      stepper.set_mu(std::log(10.0 * eps));
      stepper.restart();
    }
  }
  if (config.n_warmup > 0) eps = stepper.final_step_size();
  tel.step_size = eps;
  tel.inv_metric = inv_metric;

  const int n_keep = config.n_iter / config.thin;
  draws.resize(n_keep, static_cast<Eigen::Index>(dim));
  lp.resize(n_keep);
  tel.tree_depth.reserve(n_keep);
  tel.accept_stat.reserve(n_keep);
  tel.divergent.reserve(n_keep);
  tel.energy.reserve(n_keep);
  double accept_total = 0.0;
  int kept = 0;
  for (int it = 0; it < config.n_iter; ++it) {
    const auto info = nuts_transition(state, eps, inv_metric, config.max_treedepth, target, rng);
    tel.leapfrog_steps += info.n_leapfrog;
    accept_total += info.accept_stat;
    if (info.divergent) ++tel.divergences;
    if (info.depth >= config.max_treedepth) ++tel.treedepth_saturations;
    if ((it + 1) % config.thin != 0) continue;
    draws.row(kept) = state.z.transpose();
    lp[kept] = state.lp;
    tel.tree_depth.push_back(info.depth);
    tel.accept_stat.push_back(info.accept_stat);
    tel.divergent.push_back(info.divergent ? 1 : 0);
    tel.energy.push_back(info.energy);
    ++kept;
  }
  tel.mean_accept_stat = accept_total / config.n_iter;
}

Draws nuts_sample(const TargetFactory& factory, std::size_t dim, const NutsConfig& config) {
  config.validate();
  if (dim == 0) throw ValidationError("target dimension must be >= 1");
  Draws out;
  out.dim = dim;
  const auto n = static_cast<std::size_t>(config.n_chains);
  out.chains.resize(n);
  out.lp.resize(n);
  out.telemetry.resize(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t c) {
    try {
      run_chain(factory(), dim, config, static_cast<int>(c), out.chains[c], out.lp[c],
                out.telemetry[c]);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel && n > 1) {
    std::vector<std::thread> threads;
    threads.reserve(n);
    for (std::size_t c = 0; c < n; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < n; ++c) work(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace poiar
