// poiar: fit, simulate, predict, compare and diagnose spatio-temporal Poisson
// autoregressions from the command line.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poiar/error.hpp"
#include "poiar/fit.hpp"
#include "poiar/io.hpp"
#include "poiar/log.hpp"
#include "poiar/rng.hpp"
#include "poiar/simulate.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace poiar;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNotConverged = 3;

struct Common {
  std::string counts, covariates, edges, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, iter, warmup, thin, tau;
  std::optional<std::string> variant, depletion;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--counts", c.counts, "long-format count CSV (area_id,week_index,count,population[,in_sample])");
  cmd->add_option("--covariates", c.covariates, "long-format covariate CSV (area_id,week_index,name,value)");
  cmd->add_option("--edges", c.edges, "edge list with an area_count=L header; indices follow id_map order");
  cmd->add_option("--config", c.config, "key = value settings file with [sections]");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--chains", c.chains, "number of chains")->check(CLI::PositiveNumber);
  cmd->add_option("--iter", c.iter, "post-warmup iterations per chain")->check(CLI::PositiveNumber);
  cmd->add_option("--warmup", c.warmup, "warmup iterations per chain")->check(CLI::NonNegativeNumber);
  cmd->add_option("--thin", c.thin, "keep every thin-th draw")->check(CLI::PositiveNumber);
  cmd->add_option("--variant", c.variant, "model variant")->check(CLI::IsMember({"a", "b", "c", "d", "e"}));
  cmd->add_option("--tau", c.tau, "number of lags")->check(CLI::PositiveNumber);
  cmd->add_option("--depletion", c.depletion, "depletion factor")
      ->check(CLI::IsMember({"susceptible", "literal"}));
}

void apply_overrides(const Common& c, RunSettings& s) {
  if (c.seed) s.nuts.seed = s.sim.seed = *c.seed;
  if (c.chains) s.nuts.n_chains = *c.chains;
  if (c.iter) s.nuts.n_iter = *c.iter;
  if (c.warmup) s.nuts.n_warmup = *c.warmup;
  if (c.thin) s.nuts.thin = *c.thin;
  if (c.tau) s.model.tau = *c.tau;
  if (c.variant) s.model.variant = parse_variant(*c.variant);
  if (c.depletion) s.model.depletion = parse_depletion(*c.depletion);
}

std::string num(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot write '" + p.string() + "'");
  return os;
}

fs::path require_out(const std::string& out) {
  if (out.empty()) throw ValidationError("--out is required");
  fs::create_directories(out);
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

// The effective settings, in the config-file format, so a run can be replayed.
void write_settings(std::ostream& os, const RunSettings& s) {
  const auto& m = s.model;
  const auto& p = m.priors;
  os << "[model]\n"
     << "variant = " << variant_char(m.variant) << "\n"
     << "tau = " << m.tau << "\n";
  if (m.immunity_window) os << "immunity_window = " << *m.immunity_window << "\n";
  os << "depletion = " << depletion_name(m.depletion) << "\n"
     << "depletion_floor = " << num(m.depletion_floor) << "\n"
     << "field_coordinates = " << field_coordinates_name(m.field_coordinates) << "\n";
  if (m.sum_to_zero_variance) os << "sum_to_zero_variance = " << num(*m.sum_to_zero_variance) << "\n";
  os << "\n[priors]\n"
     << "beta0_mean = " << num(p.beta0_mean) << "\nbeta0_sd = " << num(p.beta0_sd) << "\n"
     << "beta_mean = " << num(p.beta_mean) << "\nbeta_sd = " << num(p.beta_sd) << "\n"
     << "eta_mean = " << num(p.eta_mean) << "\neta_sd = " << num(p.eta_sd) << "\n"
     << "sigma_phi_scale = " << num(p.sigma_phi_scale) << "\n"
     << "sigma_psi_scale = " << num(p.sigma_psi_scale) << "\n"
     << "dirichlet_concentration = " << num(p.dirichlet_concentration) << "\n";
  const auto& n = s.nuts;
  os << "\n[sampler]\n"
     << "chains = " << n.n_chains << "\nwarmup = " << n.n_warmup << "\niter = " << n.n_iter
     << "\nthin = " << n.thin << "\ntarget_accept = " << num(n.target_accept)
     << "\nmax_treedepth = " << n.max_treedepth << "\nseed = " << n.seed
     << "\nrhat_threshold = " << num(s.rhat_threshold) << "\n";
  const auto& b = s.bindings;
  os << "\n[covariates]\n"
     << "growth = " << join(b.growth) << "\nbaseline = " << join(b.baseline) << "\n"
     << "standardize_per_area = " << join({b.per_area.begin(), b.per_area.end()}) << "\n"
     << "standardize_global = " << join({b.global.begin(), b.global.end()}) << "\n";
}

RunSettings load_settings(const Common& c, const RunSettings& defaults = {}) {
  RunSettings s = defaults;
  if (!c.config.empty()) apply_config_file(c.config, s);
  apply_overrides(c, s);
  s.model.validate();
  s.nuts.validate();
  return s;
}

struct Inputs {
  CountData counts;
  AreaGraph graph;
  DesignMatrices designs;
  std::int64_t covariate_ignored = 0;
};

Inputs load_inputs(const Common& c, const RunSettings& s) {
  if (c.counts.empty()) throw ValidationError("--counts is required");
  Inputs in;
  in.counts = read_counts_file(c.counts);
  const auto n_areas = in.counts.panel.n_areas();
  const auto n_times = in.counts.panel.n_times();
  const bool needs_graph = has_phi(s.model.variant) || has_psi(s.model.variant);
  if (!c.edges.empty()) {
    in.graph = read_edge_list_file(c.edges);
    if (in.graph.n_areas() != n_areas)
      throw ValidationError(c.edges + ": area_count " + std::to_string(in.graph.n_areas()) +
                            " does not match the " + std::to_string(n_areas) +
                            " areas in the count file");
  } else if (needs_graph) {
    throw ValidationError("--edges is required for variant " +
                          std::string(1, variant_char(s.model.variant)));
  } else {
    in.graph = build_graph({}, n_areas);
  }
  const bool bound = !s.bindings.growth.empty() || !s.bindings.baseline.empty();
  if (!c.covariates.empty()) {
    in.designs = read_covariates_file(c.covariates, in.counts.area_ids, n_times, s.bindings,
                                      &in.covariate_ignored);
    if (!bound) warn("no covariates are bound in [covariates]; the design holds intercepts only");
  } else if (bound) {
    throw ValidationError("covariates are bound in the config but --covariates was not given");
  } else {
    in.designs = DesignMatrices::intercepts_only(n_areas * n_times);
  }
  if (in.counts.ignored_lines)
    std::cerr << "note: " << in.counts.ignored_lines << " blank or comment lines ignored in "
              << c.counts << "\n";
  if (in.covariate_ignored)
    std::cerr << "note: " << in.covariate_ignored
              << " blank, comment or pre-period lines ignored in " << c.covariates << "\n";
  return in;
}

std::string panel_hash(const CountPanel& panel) {
  std::ostringstream os;
  for (std::int32_t t = 0; t < panel.n_times(); ++t)
    for (std::int32_t l = 0; l < panel.n_areas(); ++l) os << panel.counts(l, t) << ',';
  for (std::int32_t p = 0; p < panel.n_pre(); ++p)
    for (std::int32_t l = 0; l < panel.n_areas(); ++l) os << panel.pre_counts(l, p) << ',';
  for (std::int32_t l = 0; l < panel.n_areas(); ++l) os << num(panel.population[l]) << ',';
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

std::string mask_hash(const CountPanel& panel) {
  std::string s;
  for (std::int32_t t = 0; t < panel.n_times(); ++t)
    for (std::int32_t l = 0; l < panel.n_areas(); ++l) s += panel.in_sample(l, t) ? '1' : '0';
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

json layout_json(const ParameterLayout& l) {
  json j = json::array();
  auto add = [&j](const char* name, const Slice& s) {
    if (s.size) j.push_back({{"block", name}, {"offset", s.offset}, {"size", s.size}});
  };
  add("beta", l.beta);
  add("eta", l.eta);
  add("w_raw (stick-breaking)", l.w_raw);
  add("logit_alpha_phi", l.alpha_phi);
  add("logit_rho_phi", l.rho_phi);
  add("log_sigma_phi", l.sigma_phi);
  add("phi_star (cell l + L*t)", l.phi_star);
  add("logit_alpha_psi", l.alpha_psi);
  add("logit_rho_psi", l.rho_psi);
  add("log_sigma_psi", l.sigma_psi);
  add("psi_star (cell l + L*t)", l.psi_star);
  return j;
}

json score_json(const ScoreReport& s) {
  double k_max = 0.0;
  for (Eigen::Index i = 0; i < s.loo.pareto_k.size(); ++i) k_max = std::max(k_max, s.loo.pareto_k[i]);
  auto split = [](const PredictiveSplit& p) {
    return json{{"n_cells", p.n_cells},        {"rmse_rate", p.rmse_rate},
                {"relative_mse", p.relative_mse}, {"coverage", p.coverage},
                {"mean_width", p.mean_width},  {"mean_width_rate", p.mean_width_rate}};
  };
  return {{"waic", s.waic.waic},
          {"waic_se", s.waic.se},
          {"p_waic", s.waic.p_waic},
          {"elpd_loo", s.loo.elpd_loo},
          {"loo_se", s.loo.se},
          {"p_loo", s.loo.p_loo},
          {"pareto_k_max", k_max},
          {"pareto_k_above_0.7", s.loo.n_high_k},
          {"in_sample", split(s.in_sample)},
          {"out_of_sample", split(s.out_of_sample)}};
}

void write_score_csv(std::ostream& os, const ScoreReport& s) {
  const json j = score_json(s);
  os << "metric,value\n";
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      for (const auto& [k2, v2] : v.items())
        os << k << '_' << k2 << ',' << num(v2.get<double>()) << '\n';
    } else {
      os << k << ',' << num(v.get<double>()) << '\n';
    }
  }
}

// Per-cell observed count, predictive interval and pointwise criteria.
void write_cells_csv(std::ostream& os, const Model& model, const std::vector<std::string>& ids,
                     const ScoreReport& s) {
  os << "area_id,week_index,in_sample,count,pred_mean,pred_lower,pred_upper,waic,elpd_loo,"
        "pareto_k\n";
  const auto& in = model.in_sample();
  Eigen::Index k = 0;
  for (std::int32_t c = 0; c < model.n_cells(); ++c) {
    const auto& cell = s.cells[c];
    os << ids[c % model.n_areas()] << ',' << c / model.n_areas() << ',' << int(in[c]) << ','
       << static_cast<std::int64_t>(model.y()[c]) << ',' << num(cell.mean) << ','
       << num(cell.lower) << ',' << num(cell.upper) << ',';
    if (in[c] && k < s.waic.pointwise.size()) {
      os << num(s.waic.pointwise[k]) << ',' << num(s.loo.pointwise[k]) << ','
         << num(s.loo.pareto_k[k]) << '\n';
      ++k;
    } else {
      os << ",,\n";
    }
  }
}

json telemetry_json(const Draws& d) {
  json arr = json::array();
  for (std::size_t c = 0; c < d.telemetry.size(); ++c) {
    const auto& t = d.telemetry[c];
    arr.push_back({{"chain", c},
                   {"step_size", t.step_size},
                   {"divergences", t.divergences},
                   {"warmup_divergences", t.warmup_divergences},
                   {"treedepth_saturations", t.treedepth_saturations},
                   {"mean_accept_stat", t.mean_accept_stat},
                   {"leapfrog_steps", t.leapfrog_steps}});
  }
  return arr;
}

std::string abs_path(const std::string& p) { return p.empty() ? p : fs::absolute(p).string(); }

// ---------------------------------------------------------------------------

int cmd_fit(const Common& c) {
  const RunSettings s = load_settings(c);
  const fs::path out = require_out(c.out);
  const Inputs in = load_inputs(c, s);
  const Model model(in.graph, in.counts.panel, in.designs, s.model);

  FitOptions fo;
  fo.nuts = s.nuts;
  fo.rhat_threshold = s.rhat_threshold;
  std::cerr << "fitting variant " << variant_char(s.model.variant) << ": " << model.n_areas()
            << " areas x " << model.n_times() << " weeks, " << model.layout().dim
            << " unconstrained parameters, " << s.nuts.n_chains << " chains\n";
  const FitResult fit = fit_model(model, fo);

  // All chains have joined; write artifacts.
  for (std::size_t k = 0; k < fit.constrained.chains.size(); ++k) {
    auto os = open_out(out / ("draws_chain" + std::to_string(k) + ".csv"));
    write_matrix_csv(os, fit.constrained.names, fit.constrained.chains[k]);
    auto us = open_out(out / ("unconstrained_chain" + std::to_string(k) + ".csv"));
    write_matrix_csv(us, model.layout().names(), fit.draws.chains[k]);
  }
  {
    auto os = open_out(out / "summary.csv");
    write_summary_csv(os, fit.summary);
  }
  {
    auto os = open_out(out / "score.csv");
    write_score_csv(os, fit.score);
  }
  {
    auto os = open_out(out / "cells.csv");
    write_cells_csv(os, model, in.counts.area_ids, fit.score);
  }
  {
    auto os = open_out(out / "id_map.csv");
    write_id_map(os, in.counts.area_ids);
  }
  {
    auto os = open_out(out / "run.ini");
    write_settings(os, s);
  }
  std::int64_t n_in = 0;
  for (auto f : model.in_sample()) n_in += f;
  json m;
  m["command"] = "fit";
  m["variant"] = std::string(1, variant_char(s.model.variant));
  m["tau"] = s.model.tau;
  m["depletion"] = std::string(depletion_name(s.model.depletion));
  m["field_coordinates"] = std::string(field_coordinates_name(s.model.field_coordinates));
  m["seed"] = s.nuts.seed;
  m["inputs"] = {{"counts", abs_path(c.counts)},
                 {"covariates", abs_path(c.covariates)},
                 {"edges", abs_path(c.edges)},
                 {"config", abs_path(c.config)}};
  m["ignored_lines"] = {{"counts", in.counts.ignored_lines}, {"covariates", in.covariate_ignored}};
  m["panel"] = {{"n_areas", model.n_areas()},
                {"n_times", model.n_times()},
                {"n_pre", in.counts.panel.n_pre()},
                {"n_cells", model.n_cells()},
                {"n_in_sample", n_in},
                {"counts_hash", panel_hash(in.counts.panel)},
                {"mask_hash", mask_hash(in.counts.panel)}};
  m["sampler"] = {{"chains", s.nuts.n_chains},
                  {"warmup", s.nuts.n_warmup},
                  {"iter", s.nuts.n_iter},
                  {"thin", s.nuts.thin},
                  {"draws_per_chain", fit.draws.draws_per_chain()},
                  {"target_accept", s.nuts.target_accept},
                  {"max_treedepth", s.nuts.max_treedepth}};
  m["telemetry"] = telemetry_json(fit.draws);
  m["divergences"] = fit.draws.total_divergences();
  m["treedepth_saturations"] = fit.draws.total_treedepth_saturations();
  m["max_rhat"] = fit.max_rhat;
  m["rhat_threshold"] = s.rhat_threshold;
  m["converged"] = fit.converged;
  m["score"] = score_json(fit.score);
  m["unconstrained_dim"] = model.layout().dim;
  m["unconstrained_layout"] = layout_json(model.layout());
  m["seconds"] = fit.seconds;
  {
    auto os = open_out(out / "manifest.json");
    os << m.dump(2) << '\n';
  }

  std::cout << "waic " << num(fit.score.waic.waic) << " (se " << num(fit.score.waic.se)
            << "), elpd_loo " << num(fit.score.loo.elpd_loo) << " (se " << num(fit.score.loo.se)
            << "), max R-hat " << num(fit.max_rhat) << ", divergences "
            << fit.draws.total_divergences() << "\n";
  if (fit.score.loo.n_high_k > 0)
    warn(std::to_string(fit.score.loo.n_high_k) + " cells have Pareto k above 0.7");
  if (!fit.converged) {
    warn("max R-hat " + num(fit.max_rhat) + " exceeds " + num(s.rhat_threshold));
    return kNotConverged;
  }
  return kOk;
}

std::vector<Eigen::MatrixXd> read_chain_files(const fs::path& dir, const std::string& stem,
                                              int n_chains, std::vector<std::string>& names) {
  std::vector<Eigen::MatrixXd> chains;
  for (int k = 0; k < n_chains; ++k) {
    const auto p = dir / (stem + std::to_string(k) + ".csv");
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open '" + p.string() + "'");
    std::vector<std::string> cols;
    Eigen::MatrixXd m;
    read_matrix_csv(in, cols, m, p.string());
    if (k > 0 && cols != names) throw ValidationError(p.string() + ": columns differ from chain 0");
    names = cols;
    chains.push_back(std::move(m));
  }
  return chains;
}

int cmd_predict(Common c, const std::string& fit_dir) {
  const fs::path dir = fit_dir;
  const json m = read_json(dir / "manifest.json");
  RunSettings s;
  apply_config_file((dir / "run.ini").string(), s);
  if (c.seed) s.nuts.seed = *c.seed;
  const auto& inputs = m.at("inputs");
  if (c.counts.empty()) c.counts = inputs.at("counts").get<std::string>();
  if (c.covariates.empty()) c.covariates = inputs.at("covariates").get<std::string>();
  if (c.edges.empty()) c.edges = inputs.at("edges").get<std::string>();
  const fs::path out = require_out(c.out);
  const Inputs in = load_inputs(c, s);
  const Model model(in.graph, in.counts.panel, in.designs, s.model);
  if (model.n_areas() != m.at("panel").at("n_areas").get<int>() ||
      model.n_times() != m.at("panel").at("n_times").get<int>())
    throw ValidationError("panel shape differs from the fitted panel");

  std::vector<std::string> names;
  const auto chains =
      read_chain_files(dir, "unconstrained_chain", m.at("sampler").at("chains").get<int>(), names);
  if (names != model.layout().names())
    throw ValidationError("unconstrained draws do not match the model layout");
  Eigen::Index rows = 0;
  for (const auto& ch : chains) rows += ch.rows();
  Eigen::MatrixXd stacked(rows, static_cast<Eigen::Index>(model.layout().dim));
  rows = 0;
  for (const auto& ch : chains) {
    stacked.middleRows(rows, ch.rows()) = ch;
    rows += ch.rows();
  }
  Eigen::MatrixXd loglik, lambda;
  posterior_cell_draws(model, stacked, loglik, lambda);
  const ScoreReport score = score_fit(model, loglik, lambda, s.nuts.seed);
  {
    auto os = open_out(out / "score.csv");
    write_score_csv(os, score);
  }
  {
    auto os = open_out(out / "cells.csv");
    write_cells_csv(os, model, in.counts.area_ids, score);
  }
  std::cout << "in-sample coverage " << num(score.in_sample.coverage) << " over "
            << score.in_sample.n_cells << " cells; held-out coverage "
            << num(score.out_of_sample.coverage) << " over " << score.out_of_sample.n_cells
            << " cells\n";
  return kOk;
}

struct FitRecord {
  std::string dir;
  json manifest;
  std::vector<double> waic, elpd;  // in-sample pointwise
};

FitRecord read_fit(const std::string& dir) {
  FitRecord r;
  r.dir = dir;
  r.manifest = read_json(fs::path(dir) / "manifest.json");
  const auto p = fs::path(dir) / "cells.csv";
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open '" + p.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError(p.string() + ": no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_in = col("in_sample"), c_waic = col("waic"), c_elpd = col("elpd_loo");
  while (std::getline(in, line)) {
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) continue;
    if (f[c_in] != "1") continue;
    r.waic.push_back(std::stod(f[c_waic]));
    r.elpd.push_back(std::stod(f[c_elpd]));
  }
  return r;
}

double diff_se(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = a.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  return std::sqrt(double(n) * ss / double(n - 1));
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_file) {
  if (dirs.size() < 2) throw ValidationError("compare needs at least two fit directories");
  std::vector<FitRecord> fits;
  for (const auto& d : dirs) fits.push_back(read_fit(d));
  const auto& p0 = fits.front().manifest.at("panel");
  for (const auto& f : fits) {
    const auto& p = f.manifest.at("panel");
    if (p.at("counts_hash") != p0.at("counts_hash"))
      throw ValidationError("fits '" + fits.front().dir + "' and '" + f.dir +
                            "' were run on different count panels");
    if (p.at("mask_hash") != p0.at("mask_hash"))
      throw ValidationError("fits '" + fits.front().dir + "' and '" + f.dir +
                            "' use different in-sample masks");
    if (f.elpd.size() != fits.front().elpd.size())
      throw ValidationError("fit '" + f.dir + "' has a different number of scored cells");
  }
  std::vector<std::size_t> order(fits.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto elpd = [&](std::size_t i) { return fits[i].manifest.at("score").at("elpd_loo").get<double>(); };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return elpd(a) > elpd(b); });

  std::ostringstream table;
  table << "rank,fit,variant,waic,waic_se,elpd_loo,loo_se,elpd_diff,diff_se,best\n";
  const auto& best = fits[order.front()];
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& f = fits[order[r]];
    const auto& sc = f.manifest.at("score");
    double d = 0.0;
    for (std::size_t i = 0; i < f.elpd.size(); ++i) d += f.elpd[i] - best.elpd[i];
    table << r + 1 << ',' << f.dir << ',' << f.manifest.at("variant").get<std::string>() << ','
          << num(sc.at("waic").get<double>()) << ',' << num(sc.at("waic_se").get<double>()) << ','
          << num(sc.at("elpd_loo").get<double>()) << ',' << num(sc.at("loo_se").get<double>())
          << ',' << num(d) << ',' << num(diff_se(f.elpd, best.elpd)) << ',' << (r == 0 ? 1 : 0)
          << '\n';
  }
  std::cout << table.str();
  if (!out_file.empty()) {
    auto os = open_out(out_file);
    os << table.str();
  }
  return kOk;
}

int cmd_diagnose(const std::string& fit_dir, std::optional<double> threshold, const std::string& out) {
  const fs::path dir = fit_dir;
  const json m = read_json(dir / "manifest.json");
  const double thr = threshold.value_or(m.at("rhat_threshold").get<double>());
  std::vector<std::string> names;
  const auto chains = read_chain_files(dir, "draws_chain", m.at("sampler").at("chains").get<int>(), names);
  const auto rows = summarize(names, chains);
  double max_rhat = 1.0, min_ess = std::numeric_limits<double>::infinity();
  std::vector<const SummaryRow*> flagged;
  for (const auto& r : rows) {
    if (r.degenerate) continue;
    if (std::isfinite(r.rhat)) max_rhat = std::max(max_rhat, r.rhat);
    min_ess = std::min(min_ess, r.ess_bulk);
    if (!(r.rhat <= thr)) flagged.push_back(&r);
  }
  std::cout << "parameters " << rows.size() << ", max R-hat " << num(max_rhat)
            << ", min bulk ESS " << num(min_ess) << ", divergences "
            << m.at("divergences").get<std::int64_t>() << ", treedepth saturations "
            << m.at("treedepth_saturations").get<std::int64_t>() << "\n";
  for (const auto* r : flagged)
    std::cout << "  " << r->parameter << ": R-hat " << num(r->rhat) << ", bulk ESS "
              << num(r->ess_bulk) << "\n";
  if (!out.empty()) {
    auto os = open_out(out);
    write_summary_csv(os, rows);
  }
  if (!flagged.empty()) {
    warn(std::to_string(flagged.size()) + " parameters have R-hat above " + num(thr));
    return kNotConverged;
  }
  return kOk;
}

int cmd_simulate(const Common& c, bool recover, std::optional<int> replicates) {
  RunSettings defaults;
  defaults.nuts.n_chains = 2;
  defaults.nuts.n_warmup = 750;
  defaults.nuts.n_iter = 750;
  RunSettings s = load_settings(c, defaults);
  if (replicates) s.sim.replicates = *replicates;
  s.sim.model = s.model;
  s.sim.validate();
  const fs::path out = require_out(c.out);

  if (recover) {
    RecoveryOptions ro;
    ro.nuts = s.nuts;
    ro.verbose = true;
    const RecoveryReport report = run_recovery(s.sim, ro);
    {
      auto os = open_out(out / "recovery.csv");
      write_recovery_csv(os, report);
    }
    {
      auto os = open_out(out / "recovery_manifest.json");
      write_recovery_manifest(os, s.sim, ro, report);
    }
    std::cout << "parameter coverage " << num(report.pooled_param_coverage) << ", field coverage "
              << num(report.pooled_field_coverage) << ", predictive coverage in/out "
              << num(report.in_coverage) << "/" << num(report.out_coverage) << ", excluded "
              << report.n_excluded << "/" << report.n_replicates << "\n";
    return kOk;
  }

  const AreaGraph graph = s.sim.make_graph();
  {
    auto os = open_out(out / "edges.csv");
    write_edge_list(os, graph);
  }
  std::vector<std::string> ids;
  for (std::int32_t l = 0; l < graph.n_areas(); ++l) ids.push_back(std::to_string(l));
  for (std::int32_t b = 0; b < s.sim.replicates; ++b) {
    const SimReplicate rep = simulate_replicate(s.sim, graph, b);
    if (b == 0) {
      auto os = open_out(out / "covariates.csv");
      write_covariates(os, rep.design.designs, ids, graph.n_areas());
      // Settings that fit the simulated data with the generating design.
      RunSettings fit_settings = s;
      const auto& xn = rep.design.designs.x_names;
      fit_settings.bindings.growth.assign(xn.begin() + 1, xn.end());
      const auto& vn = rep.design.designs.v_names;
      fit_settings.bindings.baseline.assign(vn.begin() + 1, vn.end());
      auto cs = open_out(out / "fit.ini");
      write_settings(cs, fit_settings);
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "rep%03d", b);
    {
      auto os = open_out(out / (std::string(stem) + "_counts.csv"));
      write_counts(os, rep.panel, ids);
    }
    const Model model(graph, rep.panel, rep.design.designs, s.sim.model);
    auto os = open_out(out / (std::string(stem) + "_truth.csv"));
    write_matrix_csv(os, constrained_names(model),
                     constrained_row(model, rep.truth).transpose());
  }
  json m;
  m["command"] = "simulate";
  m["seed"] = s.sim.seed;
  m["replicates"] = s.sim.replicates;
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(s.sim.canonical())));
  m["spec_hash"] = buf;
  m["spec"] = s.sim.canonical();
  auto ms = open_out(out / "manifest.json");
  ms << m.dump(2) << '\n';
  std::cout << "wrote " << s.sim.replicates << " replicates to " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian spatio-temporal Poisson autoregression for areal count panels"};
  app.require_subcommand(1);
  app.footer("Config file keys:\n" + config_keys_help() +
             "\nExit codes: 0 ok, 1 error, 3 convergence warning.");

  Common fit_c, sim_c, pred_c;
  auto* fit = app.add_subcommand("fit", "sample the posterior and score the fit");
  add_common(fit, fit_c);

  auto* sim = app.add_subcommand("simulate", "draw synthetic panels, or run the recovery study");
  add_common(sim, sim_c);
  bool recover = false;
  std::optional<int> replicates;
  sim->add_flag("--recover", recover, "fit every replicate and report parameter recovery");
  sim->add_option("--replicates", replicates, "number of replicates")->check(CLI::PositiveNumber);

  auto* pred = app.add_subcommand("predict", "posterior predictive scores from a finished fit");
  add_common(pred, pred_c);
  std::string pred_fit;
  pred->add_option("--fit", pred_fit, "fit output directory")->required();

  auto* cmp = app.add_subcommand("compare", "rank fits of the same panel by elpd_loo");
  std::vector<std::string> cmp_dirs;
  std::string cmp_out;
  cmp->add_option("fits", cmp_dirs, "fit output directories")->required();
  cmp->add_option("--out", cmp_out, "also write the table to this CSV file");

  auto* diag = app.add_subcommand("diagnose", "convergence diagnostics of a finished fit");
  std::string diag_fit, diag_out;
  std::optional<double> diag_thr;
  diag->add_option("--fit", diag_fit, "fit output directory")->required();
  diag->add_option("--rhat-threshold", diag_thr, "R-hat pass line (default: the fit's)");
  diag->add_option("--out", diag_out, "write the recomputed summary to this CSV file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }

  try {
    if (*fit) return cmd_fit(fit_c);
    if (*sim) return cmd_simulate(sim_c, recover, replicates);
    if (*pred) return cmd_predict(pred_c, pred_fit);
    if (*cmp) return cmd_compare(cmp_dirs, cmp_out);
    if (*diag) return cmd_diagnose(diag_fit, diag_thr, diag_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
