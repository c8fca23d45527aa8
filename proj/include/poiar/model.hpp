#pragma once

// Poisson autoregression with Leroux CAR-AR space-time effects.
//
//   Y_ℓt | past ~ Poisson(λ_ℓt)
//   λ_ℓt = (Σ_i w_i y_ℓ,t−i · r̃_ℓt + b_ℓt) · d_ℓt
//   log r̃_ℓt = x_ℓtᵀ β + φ_ℓt
//   log b_ℓt = log off_ℓ + v_ℓtᵀ η + ψ_ℓt
//
// Cells are addressed in column-major order, c = ℓ + L·t, so the spatial slice
// at time t is contiguous.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "poiar/car.hpp"
#include "poiar/graph.hpp"

namespace poiar {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class Variant { a, b, c, d, e };
enum class DepletionMode { susceptible, literal };
// How the sampler sees each field's standardized innovations φ*_t ~ N(0, Q(α)⁻¹):
// directly (innovations), or through φ*_t = U diag((1 − αλ)^−½) ε_t with ε_t ~ N(0, I)
// (whitened), which decouples α from the field when the data say little about it.
enum class FieldCoordinates { whitened, innovations };

Variant parse_variant(std::string_view s);
char variant_char(Variant v);
DepletionMode parse_depletion(std::string_view s);
std::string_view depletion_name(DepletionMode m);
FieldCoordinates parse_field_coordinates(std::string_view s);
std::string_view field_coordinates_name(FieldCoordinates f);

// φ acts on the growth rate (variants b, d, e); ψ on the baseline (c, d, e).
inline bool has_phi(Variant v) { return v == Variant::b || v == Variant::d || v == Variant::e; }
inline bool has_psi(Variant v) { return v == Variant::c || v == Variant::d || v == Variant::e; }
// Variant e keeps only the two intercepts.
inline bool has_covariates(Variant v) { return v != Variant::e; }

struct PriorConfig {
  double beta0_mean = -0.5;
  double beta0_sd = 1.0;
  double beta_mean = 0.0;
  double beta_sd = 1.0;
  double eta_mean = 0.0;
  double eta_sd = 1.0;
  double sigma_phi_scale = 0.1;  // half-normal scale
  double sigma_psi_scale = 0.1;
  double dirichlet_concentration = 1.0;
};

struct ModelConfig {
  Variant variant = Variant::d;
  std::int32_t tau = 3;
  // Depletion window in weeks; empty means all available history.
  std::optional<std::int32_t> immunity_window;
  DepletionMode depletion = DepletionMode::susceptible;
  FieldCoordinates field_coordinates = FieldCoordinates::whitened;
  double depletion_floor = 1e-6;
  PriorConfig priors;
  // Variance of the soft sum-to-zero density on Σφ and Σψ; empty means 0.001·n².
  std::optional<double> sum_to_zero_variance;

  void validate() const;
};

struct CountPanel {
  CountMatrix counts;      // L×T
  CountMatrix pre_counts;  // L×P, column p holds week −(p+1)
  Eigen::VectorXd population;
  Eigen::VectorXd offset;  // default population / 10000
  MaskMatrix in_sample;    // L×T

  std::int32_t n_areas() const { return static_cast<std::int32_t>(counts.rows()); }
  std::int32_t n_times() const { return static_cast<std::int32_t>(counts.cols()); }
  std::int32_t n_pre() const { return static_cast<std::int32_t>(pre_counts.cols()); }
  // Count at week t, where t < 0 reads the pre-period.
  std::int64_t count_at(std::int32_t area, std::int32_t t) const;

  void validate() const;

  // Fills offset = pop/10000 and an all-true mask.
  static CountPanel make(CountMatrix counts, CountMatrix pre_counts, Eigen::VectorXd population);
};

struct DesignMatrices {
  Eigen::MatrixXd x;  // (L·T) × (k+1), column 0 is the intercept
  Eigen::MatrixXd v;  // (L·T) × (ν+1), column 0 is the intercept
  std::vector<std::string> x_names;
  std::vector<std::string> v_names;

  static DesignMatrices intercepts_only(std::int32_t n_cells);
  void validate(std::int32_t n_cells) const;
};

struct ParameterSet {
  Eigen::VectorXd beta;
  Eigen::VectorXd eta;
  Eigen::VectorXd w;
  CarParams theta_phi;
  CarParams theta_psi;
  StField phi_star;  // 0×0 when the variant has no φ
  StField psi_star;
};

struct Slice {
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t end() const { return offset + size; }
};

// Where each parameter block lives in the flat unconstrained vector.
struct ParameterLayout {
  Variant variant = Variant::d;
  std::int32_t n_areas = 0;
  std::int32_t n_times = 0;
  Slice beta, eta, w_raw;
  Slice alpha_phi, rho_phi, sigma_phi, phi_star;
  Slice alpha_psi, rho_psi, sigma_psi, psi_star;
  std::size_t dim = 0;
  // Eigenbasis of M when the field slices hold whitened coordinates; null otherwise.
  std::shared_ptr<const EigenSpectrum> basis;

  static ParameterLayout make(const ModelConfig& config, std::int32_t n_areas,
                              std::int32_t n_times, std::int32_t n_x, std::int32_t n_v);
  std::vector<std::string> names() const;
};

// Immutable data bundle shared by every chain: graph, spectrum, panel, designs,
// config and the data-only quantities derived from them (lag matrix, depletion).
class Model {
 public:
  Model(AreaGraph graph, CountPanel panel, DesignMatrices designs, ModelConfig config);

  const AreaGraph& graph() const { return graph_; }
  const EigenSpectrum& spectrum() const { return spectrum_; }
  const CountPanel& panel() const { return panel_; }
  const DesignMatrices& designs() const { return designs_; }
  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }

  std::int32_t n_areas() const { return panel_.n_areas(); }
  std::int32_t n_times() const { return panel_.n_times(); }
  std::int32_t n_cells() const { return n_areas() * n_times(); }
  // Number of β / η coefficients active for the variant.
  std::int32_t n_beta() const { return static_cast<std::int32_t>(layout_.beta.size); }
  std::int32_t n_eta() const { return static_cast<std::int32_t>(layout_.eta.size); }

  // (L·T) × τ matrix of lagged counts y_ℓ,t−i.
  const Eigen::MatrixXd& lags() const { return lags_; }
  const Eigen::VectorXd& depletion_factors() const { return depletion_; }
  const Eigen::VectorXd& log_offset() const { return log_offset_; }  // per cell
  const Eigen::VectorXd& y() const { return y_; }                    // per cell
  const Eigen::VectorXd& log_y_factorial() const { return lgamma_y_; }
  const std::vector<std::uint8_t>& in_sample() const { return in_sample_; }
  double sum_to_zero_variance() const { return sum_to_zero_var_; }

 private:
  AreaGraph graph_;
  EigenSpectrum spectrum_;
  CountPanel panel_;
  DesignMatrices designs_;
  ModelConfig config_;
  ParameterLayout layout_;
  Eigen::MatrixXd lags_;
  Eigen::VectorXd depletion_, log_offset_, y_, lgamma_y_;
  std::vector<std::uint8_t> in_sample_;
  double sum_to_zero_var_ = 0.0;
};

enum class CellSelection { in_sample, held_out, all };

double depletion(const CountPanel& panel, const ModelConfig& config, std::int32_t area,
                 std::int32_t t);

double weighted_lag(const CountPanel& panel, std::span<const double> w, std::int32_t area,
                    std::int32_t t);

// λ_ℓt for one cell.
double rate(const Model& model, const ParameterSet& params, std::int32_t area, std::int32_t t);

// Per-cell rate components for the whole panel.
struct RateComponents {
  Eigen::VectorXd lambda;       // full rate
  Eigen::VectorXd epidemic;     // weighted_lag · r̃ (before depletion)
  Eigen::VectorXd endemic;      // b (before depletion)
  Eigen::VectorXd growth_rate;  // r̃
  StField phi, psi;             // transformed effects (zero when absent)
};

RateComponents rate_components(const Model& model, const ParameterSet& params);

struct LogLikelihood {
  double total = 0.0;
  Eigen::MatrixXd pointwise;  // L×T; NaN at unselected cells
};

LogLikelihood log_likelihood(const Model& model, const ParameterSet& params,
                             CellSelection selection = CellSelection::in_sample);

double log_prior(const Model& model, const ParameterSet& params);

// Unconstrained → constrained, with the log-Jacobian of the change of variables.
std::pair<ParameterSet, double> transform(const ParameterLayout& layout,
                                          std::span<const double> z);
Eigen::VectorXd untransform(const ParameterLayout& layout, const ParameterSet& params);

// Stick-breaking simplex map and its inverse.
std::pair<Eigen::VectorXd, double> simplex_transform(std::span<const double> y);
Eigen::VectorXd simplex_untransform(std::span<const double> w);

// Reentrant log-posterior and gradient. Each concurrent caller owns its own
// evaluator; the Model is shared read-only.
class PosteriorEvaluator {
 public:
  explicit PosteriorEvaluator(const Model& model);

  // Returns lp and writes ∂lp/∂z into grad. Non-finite lp yields −∞ and a zero gradient.
  double operator()(std::span<const double> z, std::span<double> grad);
  // lp only.
  double log_density(std::span<const double> z);

  // Per-cell Poisson log-likelihood at z for every cell (both masks).
  void pointwise_log_likelihood(std::span<const double> z, std::span<double> out);

  const Model& model() const { return *model_; }

 private:
  double evaluate(std::span<const double> z, double* grad);

  const Model* model_;
  Eigen::VectorXd phi_, psi_, lin_r_, lin_b_, gphi_, gpsi_, tmp_;
  // Whitened coordinates only: innovations, per-eigenvalue scales, projected adjoint.
  Eigen::MatrixXd star_phi_, star_psi_, gproj_;
  Eigen::VectorXd scale_phi_, scale_psi_;
};

std::pair<double, Eigen::VectorXd> log_posterior_grad(const Model& model,
                                                      std::span<const double> z);

// Share of each week's expected cases explained by the autoregressive term.
Eigen::MatrixXd epidemic_proportion(const Model& model, const ParameterSet& params);

// Centers and scales columns 1.. of a (L·T)-row design (column 0 is the intercept),
// either within each area's time series or over all cells. Sample sd (n − 1).
Eigen::MatrixXd standardize_covariates(const Eigen::MatrixXd& raw, std::int32_t n_areas,
                                       bool per_area,
                                       std::span<const std::string> names = {});

// Standardizes a single (L·T) column in place.
void standardize_column(Eigen::Ref<Eigen::VectorXd> column, std::int32_t n_areas, bool per_area,
                        const std::string& name);

}  // namespace poiar
