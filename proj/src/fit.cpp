#include "poiar/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <string>

#include "poiar/rng.hpp"

namespace poiar {

std::vector<std::string> constrained_names(const Model& model) {
  std::vector<std::string> out;
  const auto& d = model.designs();
  for (std::int32_t j = 0; j < model.n_beta(); ++j) out.push_back("beta[" + d.x_names[j] + "]");
  for (std::int32_t j = 0; j < model.n_eta(); ++j) out.push_back("eta[" + d.v_names[j] + "]");
  for (std::int32_t i = 1; i <= model.config().tau; ++i)
    out.push_back("w[" + std::to_string(i) + "]");
  const auto v = model.config().variant;
  for (const char* f : {"phi", "psi"}) {
    const bool on = f[1] == 'h' ? has_phi(v) : has_psi(v);
    if (!on) continue;
    for (const char* p : {"alpha_", "rho_", "sigma_"}) out.push_back(std::string(p) + f);
  }
  for (const char* f : {"phi", "psi"}) {
    const bool on = f[1] == 'h' ? has_phi(v) : has_psi(v);
    if (!on) continue;
    for (std::int32_t t = 0; t < model.n_times(); ++t)
      for (std::int32_t l = 0; l < model.n_areas(); ++l)
        out.push_back(std::string(f) + "[" + std::to_string(l) + ":" + std::to_string(t) + "]");
  }
  return out;
}

Eigen::VectorXd constrained_row(const Model& model, const ParameterSet& p) {
  const auto v = model.config().variant;
  const auto n = model.n_cells();
  const Eigen::Index size = p.beta.size() + p.eta.size() + p.w.size() +
                            (has_phi(v) ? 3 + n : 0) + (has_psi(v) ? 3 + n : 0);
  Eigen::VectorXd row(size);
  Eigen::Index at = 0;
  auto put = [&](const Eigen::VectorXd& x) {
    row.segment(at, x.size()) = x;
    at += x.size();
  };
  put(p.beta);
  put(p.eta);
  put(p.w);
  if (has_phi(v)) put(Eigen::Vector3d(p.theta_phi.alpha, p.theta_phi.rho, p.theta_phi.sigma));
  if (has_psi(v)) put(Eigen::Vector3d(p.theta_psi.alpha, p.theta_psi.rho, p.theta_psi.sigma));
  if (has_phi(v)) {
    const StField f = noncentered(p.phi_star, p.theta_phi);
    put(Eigen::Map<const Eigen::VectorXd>(f.data(), f.size()));
  }
  if (has_psi(v)) {
    const StField f = noncentered(p.psi_star, p.theta_psi);
    put(Eigen::Map<const Eigen::VectorXd>(f.data(), f.size()));
  }
  return row;
}

ConstrainedDraws constrain_draws(const Model& model, const Draws& draws) {
  ConstrainedDraws out;
  out.names = constrained_names(model);
  const auto& layout = model.layout();
  for (const auto& chain : draws.chains) {
    Eigen::MatrixXd m(chain.rows(), static_cast<Eigen::Index>(out.names.size()));
    Eigen::VectorXd z(chain.cols());
    for (Eigen::Index k = 0; k < chain.rows(); ++k) {
      z = chain.row(k).transpose();
      const auto [params, jac] = transform(layout, {z.data(), std::size_t(z.size())});
      m.row(k) = constrained_row(model, params).transpose();
    }
    out.chains.push_back(std::move(m));
  }
  return out;
}

void posterior_cell_draws(const Model& model, const Eigen::MatrixXd& stacked,
                          Eigen::MatrixXd& loglik, Eigen::MatrixXd& lambda) {
  const auto s = stacked.rows();
  const auto n = model.n_cells();
  loglik.resize(s, n);
  lambda.resize(s, n);
  Eigen::VectorXd z(stacked.cols());
  const auto& y = model.y();
  const auto& lgy = model.log_y_factorial();
  for (Eigen::Index k = 0; k < s; ++k) {
    z = stacked.row(k).transpose();
    const auto [params, jac] = transform(model.layout(), {z.data(), std::size_t(z.size())});
    const auto rc = rate_components(model, params);
    lambda.row(k) = rc.lambda.transpose();
    for (std::int32_t c = 0; c < n; ++c) {
      const double lam = rc.lambda[c];
      loglik(k, c) = y[c] == 0.0 ? -lam : y[c] * std::log(lam) - lam - lgy[c];
    }
  }
}

ScoreReport score_fit(const Model& model, const Eigen::MatrixXd& loglik,
                      const Eigen::MatrixXd& lambda, std::uint64_t seed) {
  ScoreReport r;
  const auto& in = model.in_sample();
  std::vector<Eigen::Index> cols;
  for (std::size_t c = 0; c < in.size(); ++c)
    if (in[c]) cols.push_back(static_cast<Eigen::Index>(c));
  const Eigen::MatrixXd ll_in = loglik(Eigen::all, cols);
  if (!cols.empty() && ll_in.rows() >= 2) {
    r.waic = waic(ll_in);
    r.loo = psis_loo(ll_in);
  }
  Rng rng(mix_seed(seed, 0x70726564ULL), 0);
  r.cells = predictive_cells(lambda, rng);
  std::vector<double> pop(model.n_cells());
  for (std::int32_t c = 0; c < model.n_cells(); ++c)
    pop[c] = model.panel().population[c % model.n_areas()];
  score_predictions(r.cells, {model.y().data(), std::size_t(model.n_cells())}, pop, in,
                    r.in_sample, r.out_of_sample);
  return r;
}

FitResult fit_model(const Model& model, const FitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  FitResult r;
  r.draws = nuts_sample(
      [&model] {
        auto eval = std::make_shared<PosteriorEvaluator>(model);
        return LogDensityFn([eval](std::span<const double> z, std::span<double> g) {
          return (*eval)(z, g);
        });
      },
      model.layout().dim, options.nuts);
  r.constrained = constrain_draws(model, r.draws);
  r.summary = summarize(r.constrained.names, r.constrained.chains);
  r.max_rhat = 1.0;
  for (const auto& row : r.summary)
    if (std::isfinite(row.rhat)) r.max_rhat = std::max(r.max_rhat, row.rhat);
  r.converged = r.max_rhat <= options.rhat_threshold;
  posterior_cell_draws(model, r.draws.stacked(), r.loglik, r.lambda);
  r.score = score_fit(model, r.loglik, r.lambda, options.nuts.seed);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace poiar
