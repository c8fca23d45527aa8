#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace poiar {

class Rng;

// Draws of a scalar quantity arranged draws × chains.
using ChainMatrix = Eigen::MatrixXd;

struct RhatResult {
  double value = 1.0;
  bool degenerate = false;  // every draw identical
};

// Rank-normalized split R̂: the larger of the bulk and folded (tail) versions.
RhatResult split_rhat(const ChainMatrix& draws);
// Plain split R̂ without rank normalization (used by the rank version).
double split_rhat_basic(const ChainMatrix& draws);
// Bulk effective sample size on the rank-normalized split chains.
double ess_bulk(const ChainMatrix& draws);
// ESS of the draws as given (Geyer initial monotone sequence over split chains).
double ess_basic(const ChainMatrix& draws);
// Normal scores of the pooled fractional ranks (average ranks for ties).
ChainMatrix rank_normalize(const ChainMatrix& draws);

// log(mean(exp(x))) with max shift.
double log_mean_exp(std::span<const double> x);

struct WaicResult {
  double waic = 0.0;  // −2 (lppd − p_waic); lower is better
  double se = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
  double elpd_waic = 0.0;
  Eigen::VectorXd pointwise;  // per-cell waic contribution
};

// loglik is draws × cells.
WaicResult waic(const Eigen::MatrixXd& loglik);

struct ParetoFit {
  double k = 0.0;
  double sigma = 0.0;
};

// Zhang–Stephens posterior-mean fit of a generalized Pareto to exceedances
// (sorted ascending, all > 0), with a weakly informative shrinkage of k.
ParetoFit fit_generalized_pareto(std::span<const double> exceedances);

struct SmoothedWeights {
  Eigen::VectorXd log_weights;  // normalized to log-sum-exp 0
  double k = 0.0;
  bool degenerate = false;  // all ratios equal
  bool smoothed = true;     // false for the raw importance-sampling fallback
};

// Pareto-smooths one vector of log importance ratios.
SmoothedWeights psis_smooth(std::span<const double> log_ratios);

struct LooResult {
  double elpd_loo = 0.0;  // larger is better
  double se = 0.0;
  double p_loo = 0.0;
  double lppd = 0.0;
  Eigen::VectorXd pointwise;  // per-cell elpd
  Eigen::VectorXd pareto_k;
  std::vector<std::uint8_t> degenerate;
  std::int64_t n_high_k = 0;  // k̂ > 0.7
  bool raw_importance_sampling = false;
};

LooResult psis_loo(const Eigen::MatrixXd& loglik);

struct PredictiveSplit {
  std::int64_t n_cells = 0;
  double rmse_rate = 0.0;     // per 10,000 population
  double relative_mse = 0.0;  // Σ(pred − y)² / Σ y²
  double coverage = 0.0;      // 95% central interval
  double mean_width = 0.0;    // counts
  double mean_width_rate = 0.0;  // per 10,000 population
};

struct PredictiveCell {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct ScoreReport {
  WaicResult waic;
  LooResult loo;
  PredictiveSplit in_sample;
  PredictiveSplit out_of_sample;
  std::vector<PredictiveCell> cells;
};

// Posterior predictive summary from rate draws (draws × cells): one Poisson
// draw per rate draw, equal-tailed 95% interval, predictive mean as point.
std::vector<PredictiveCell> predictive_cells(const Eigen::MatrixXd& lambda_draws, Rng& rng);

// Scores observed counts y against predictive cells, split by the in-sample flag.
// population is per cell and only used for the per-10,000 rate scale.
void score_predictions(std::span<const PredictiveCell> cells, std::span<const double> y,
                       std::span<const double> population,
                       std::span<const std::uint8_t> in_sample, PredictiveSplit& in,
                       PredictiveSplit& out);

struct SummaryRow {
  std::string parameter;
  double mean = 0.0, sd = 0.0, q025 = 0.0, q975 = 0.0, rhat = 1.0, ess_bulk = 0.0;
  bool degenerate = false;
};

// One row per column of the per-chain draw matrices (each n_draws × n_params).
std::vector<SummaryRow> summarize(const std::vector<std::string>& names,
                                  const std::vector<Eigen::MatrixXd>& chains);

// Type-7 sample quantile of unsorted data.
double quantile(std::span<const double> x, double p);

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

}  // namespace poiar
