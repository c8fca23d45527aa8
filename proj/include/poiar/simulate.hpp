#pragma once

// Synthetic panels drawn from the full model and the parameter-recovery study.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poiar/diagnostics.hpp"
#include "poiar/graph.hpp"
#include "poiar/model.hpp"
#include "poiar/sampler.hpp"

namespace poiar {

class Rng;

// Half-open week range [start, end).
struct WeekWindow {
  std::int32_t start = 0;
  std::int32_t end = 0;
};

struct SimSpec {
  // Graph: a rows×cols lattice unless `graph` is set.
  std::int32_t lattice_rows = 5;
  std::int32_t lattice_cols = 5;
  std::optional<AreaGraph> graph;

  std::int32_t n_times = 30;
  std::int32_t replicates = 20;
  double holdout = 0.2;
  std::uint64_t seed = 1;

  // Model used both to generate and to fit (variant d by default).
  ModelConfig model;
  // Scales of the half-normal draws for the true σ's.
  double true_sigma_phi_scale = 0.1;
  double true_sigma_psi_scale = 0.5;

  // Synthetic design: three area-level covariates, a tier schedule and two
  // seasonal indicator windows.
  std::int32_t n_area_covariates = 3;
  double area_coef_sd = 0.1;
  std::vector<double> tier_effects{std::log(5.0 / 6.0), std::log(2.0 / 3.0), std::log(0.5)};
  std::int32_t tier_block_weeks = 5;
  WeekWindow summer{2, 9};
  WeekWindow christmas{24, 27};
  double summer_effect = std::log(2.5);
  double christmas_effect = std::log(0.4);
  Eigen::VectorXd true_w = (Eigen::VectorXd(3) << 0.7, 0.2, 0.1).finished();

  // Areas draw a population uniformly in [min, max].
  double population_min = 100000.0;
  double population_max = 300000.0;
  // Pre-period counts ~ Poisson(rate per 10,000 · offset).
  double pre_rate_per_10k = 5.0;

  // A trajectory is redrawn if any weekly rate exceeds this many cases per
  // 10,000 people, or if a rate overflows.
  double max_rate_per_10k = 150.0;
  std::int32_t max_redraws = 200;

  void validate() const;
  AreaGraph make_graph() const;
  std::string canonical() const;  // stable text form used for the manifest hash
};

struct SimDesign {
  Eigen::VectorXd population;
  DesignMatrices designs;
};

// Column names: intercept, area_1.., tier_II, tier_III, tier_IV, summer, christmas.
SimDesign make_sim_design(const SimSpec& spec, std::int32_t n_areas, Rng& rng);

ParameterSet draw_true_params(const SimSpec& spec, const AreaGraph& graph, std::int32_t n_x,
                              Rng& rng);

// Forward recursion y_t ~ Poisson(λ_t). Returns nullopt when a rate overflows
// or the trajectory exceeds spec.max_rate_per_10k. pre_counts, when given,
// replace the drawn pre-period.
std::optional<CountPanel> gen_panel(const SimSpec& spec, const SimDesign& design,
                                    const AreaGraph& graph, const ParameterSet& params, Rng& rng,
                                    const CountMatrix* pre_counts = nullptr);

// Marks exactly round(fraction·cells) cells as held out.
MaskMatrix holdout_mask(std::int32_t n_areas, std::int32_t n_times, double fraction, Rng& rng);

struct SimReplicate {
  SimDesign design;
  ParameterSet truth;
  CountPanel panel;
  std::int32_t redraws = 0;
};

// Replicate `index`, drawn from its own stream derived from (seed, index).
SimReplicate simulate_replicate(const SimSpec& spec, const AreaGraph& graph, std::int32_t index);

struct ParamRecovery {
  std::string name;
  double rmse = 0.0;
  double coverage = 0.0;
  std::int64_t n = 0;
};

struct ReplicateRecord {
  std::int32_t index = 0;
  bool excluded = false;
  double max_rhat = 1.0;
  std::int64_t divergences = 0;
  double seconds = 0.0;
  std::int32_t redraws = 0;
  bool weights_within_tol = false;
  PredictiveSplit in_sample, out_of_sample;
};

struct RecoveryReport {
  std::vector<ParamRecovery> params;  // per scalar parameter
  ParamRecovery phi, psi;             // pooled over cells
  double pooled_param_coverage = 0.0;
  double pooled_field_coverage = 0.0;
  double weights_within_tol_fraction = 0.0;
  double weight_tolerance = 0.05;
  // Averages over included replicates.
  double in_rmse_rate = 0, in_relative_mse = 0, in_coverage = 0;
  double out_rmse_rate = 0, out_relative_mse = 0, out_coverage = 0;
  std::int32_t n_replicates = 0;
  std::int32_t n_excluded = 0;
  double rhat_threshold = 1.1;
  std::vector<ReplicateRecord> replicates;
};

struct RecoveryOptions {
  NutsConfig nuts;
  double rhat_threshold = 1.1;
  double weight_tolerance = 0.05;
  bool verbose = false;
};

RecoveryReport run_recovery(const SimSpec& spec, const RecoveryOptions& options);

void write_recovery_csv(std::ostream& os, const RecoveryReport& report);
void write_recovery_manifest(std::ostream& os, const SimSpec& spec, const RecoveryOptions& options,
                             const RecoveryReport& report);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& s);

}  // namespace poiar
