#pragma once

// File formats: edge lists, long-format count and covariate CSVs, the keyed
// config file, and draw matrices.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poiar/graph.hpp"
#include "poiar/model.hpp"
#include "poiar/sampler.hpp"
#include "poiar/simulate.hpp"

namespace poiar {

// "area_count=L" header, then one "i,j" pair per line (0-based); '#' starts a comment.
AreaGraph read_edge_list(std::istream& in, const std::string& source = "edge list");
AreaGraph read_edge_list_file(const std::string& path);
void write_edge_list(std::ostream& out, const AreaGraph& graph);

struct CountData {
  CountPanel panel;
  std::vector<std::string> area_ids;  // index → id, first-appearance order
  std::int64_t ignored_lines = 0;     // blank and comment lines
};

// Columns (any order): area_id, week_index, count, population[, in_sample].
// Negative week_index rows fill the pre-period.
CountData read_counts(std::istream& in, const std::string& source = "counts");
CountData read_counts_file(const std::string& path);
void write_counts(std::ostream& out, const CountPanel& panel,
                  const std::vector<std::string>& area_ids);

struct CovariateBindings {
  std::vector<std::string> growth;    // columns of X after the intercept
  std::vector<std::string> baseline;  // columns of V after the intercept
  std::set<std::string> per_area;     // standardized within each area
  std::set<std::string> global;       // standardized over all cells
};

// Columns: area_id, week_index, name, value. An empty week_index applies the
// value to every week of the area.
DesignMatrices read_covariates(std::istream& in, const std::vector<std::string>& area_ids,
                               std::int32_t n_times, const CovariateBindings& bindings,
                               const std::string& source = "covariates",
                               std::int64_t* ignored_lines = nullptr);
DesignMatrices read_covariates_file(const std::string& path,
                                    const std::vector<std::string>& area_ids,
                                    std::int32_t n_times, const CovariateBindings& bindings,
                                    std::int64_t* ignored_lines = nullptr);
void write_covariates(std::ostream& out, const DesignMatrices& designs,
                      const std::vector<std::string>& area_ids, std::int32_t n_areas);

struct RunSettings {
  ModelConfig model;
  NutsConfig nuts;
  CovariateBindings bindings;
  double rhat_threshold = 1.05;
  SimSpec sim;
};

// Applies a "key = value" file with [model], [priors], [sampler], [covariates]
// and [simulate] sections. Unknown sections or keys are errors.
void apply_config(std::istream& in, RunSettings& settings, const std::string& source = "config");
void apply_config_file(const std::string& path, RunSettings& settings);
// Documentation of every accepted key, for --help.
std::string config_keys_help();

// Draw matrices with a header row; values printed with 17 significant digits.
void write_matrix_csv(std::ostream& out, const std::vector<std::string>& names,
                      const Eigen::MatrixXd& m);
void read_matrix_csv(std::istream& in, std::vector<std::string>& names, Eigen::MatrixXd& m,
                     const std::string& source = "matrix");

void write_id_map(std::ostream& out, const std::vector<std::string>& area_ids);

std::vector<std::string> split_csv_line(const std::string& line);
std::string trim(const std::string& s);

}  // namespace poiar
