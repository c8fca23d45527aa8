#pragma once

// Sampling, constrained-space draws, summaries and scores for one model.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poiar/diagnostics.hpp"
#include "poiar/model.hpp"
#include "poiar/sampler.hpp"

namespace poiar {

// Column names of the constrained draw matrices: β, η, w, the CAR parameters
// and the transformed fields φ[l,t], ψ[l,t].
std::vector<std::string> constrained_names(const Model& model);

// One constrained row for a parameter set, in constrained_names order.
Eigen::VectorXd constrained_row(const Model& model, const ParameterSet& params);

struct ConstrainedDraws {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;  // n_draws × n_columns
};

ConstrainedDraws constrain_draws(const Model& model, const Draws& draws);

struct FitOptions {
  NutsConfig nuts;
  double rhat_threshold = 1.05;
};

struct FitResult {
  Draws draws;
  ConstrainedDraws constrained;
  std::vector<SummaryRow> summary;
  // Stacked over chains: (n_chains · n_draws) × n_cells, column c = l + L·t.
  Eigen::MatrixXd loglik;
  Eigen::MatrixXd lambda;
  ScoreReport score;
  double max_rhat = 1.0;
  bool converged = true;
  double seconds = 0.0;
};

// Evaluates pointwise log-likelihood and λ at every stacked unconstrained draw.
void posterior_cell_draws(const Model& model, const Eigen::MatrixXd& stacked,
                          Eigen::MatrixXd& loglik, Eigen::MatrixXd& lambda);

// WAIC and PSIS-LOO on in-sample cells plus predictive scores for both splits.
ScoreReport score_fit(const Model& model, const Eigen::MatrixXd& loglik,
                      const Eigen::MatrixXd& lambda, std::uint64_t seed);

FitResult fit_model(const Model& model, const FitOptions& options);

}  // namespace poiar
