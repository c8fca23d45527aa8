#include "poiar/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "poiar/car.hpp"
#include "poiar/error.hpp"
#include "poiar/fit.hpp"
#include "poiar/log.hpp"
#include "poiar/rng.hpp"

namespace poiar {

namespace {

constexpr std::uint64_t kDesignStream = 0x64657369676eULL;  // "design"
constexpr std::uint64_t kReplicateStream = 0x7265706cULL;

}  // namespace

void SimSpec::validate() const {
  if (!graph && (lattice_rows < 1 || lattice_cols < 1))
    throw ValidationError("lattice dimensions must be >= 1");
  if (n_times < 1) throw ValidationError("simulation needs T >= 1");
  if (replicates < 1) throw ValidationError("replicate count must be >= 1");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ValidationError("holdout must lie in [0, 1)");
  model.validate();
  if (true_w.size() != model.tau) throw ValidationError("true weights must have tau entries");
  if (std::abs(true_w.sum() - 1.0) > 1e-9 || (true_w.array() <= 0.0).any())
    throw ValidationError("true weights must be a positive simplex");
  if (!(true_sigma_phi_scale > 0.0 && true_sigma_psi_scale > 0.0))
    throw ValidationError("true sigma scales must be positive");
  if (n_area_covariates < 0) throw ValidationError("n_area_covariates must be >= 0");
  if (tier_block_weeks < 1) throw ValidationError("tier_block_weeks must be >= 1");
  if (!(population_min > 0.0 && population_max >= population_min))
    throw ValidationError("population range is invalid");
  if (!(pre_rate_per_10k >= 0.0)) throw ValidationError("pre-period rate must be >= 0");
  if (!(max_rate_per_10k > 0.0)) throw ValidationError("max_rate_per_10k must be positive");
  if (max_redraws < 1) throw ValidationError("max_redraws must be >= 1");
  if (!has_covariates(model.variant) && (n_area_covariates > 0 || !tier_effects.empty()))
    throw ValidationError("variant e fits intercepts only; disable the synthetic covariates");
}

AreaGraph SimSpec::make_graph() const { return graph ? *graph : lattice_graph(lattice_rows, lattice_cols); }

std::string SimSpec::canonical() const {
  std::ostringstream os;
  os.precision(17);
  const AreaGraph g = make_graph();
  os << "areas=" << g.n_areas() << ";edges=";
  for (const auto& e : g.edges()) os << e.i << '-' << e.j << ',';
  os << ";T=" << n_times << ";B=" << replicates << ";holdout=" << holdout << ";seed=" << seed
     << ";variant=" << variant_char(model.variant) << ";tau=" << model.tau
     << ";depletion=" << depletion_name(model.depletion)
     << ";window=" << (model.immunity_window ? *model.immunity_window : -1)
     << ";sigma_phi_true=" << true_sigma_phi_scale << ";sigma_psi_true=" << true_sigma_psi_scale
     << ";sigma_phi_prior=" << model.priors.sigma_phi_scale
     << ";sigma_psi_prior=" << model.priors.sigma_psi_scale << ";area_cov=" << n_area_covariates
     << ";area_sd=" << area_coef_sd << ";tiers=";
  for (double t : tier_effects) os << t << ',';
  os << ";block=" << tier_block_weeks << ";summer=" << summer.start << '-' << summer.end << ':'
     << summer_effect << ";christmas=" << christmas.start << '-' << christmas.end << ':'
     << christmas_effect << ";w=";
  for (double w : true_w) os << w << ',';
  os << ";pop=" << population_min << '-' << population_max << ";pre=" << pre_rate_per_10k
     << ";max_rate=" << max_rate_per_10k << ";redraws=" << max_redraws;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SimDesign make_sim_design(const SimSpec& spec, std::int32_t n_areas, Rng& rng) {
  const auto n_times = spec.n_times;
  const auto n = n_areas * n_times;
  const auto n_tiers = static_cast<std::int32_t>(spec.tier_effects.size());
  const bool seasons = has_covariates(spec.model.variant);
  const std::int32_t n_x = 1 + spec.n_area_covariates + n_tiers + (seasons ? 2 : 0);

  SimDesign d;
  d.population.resize(n_areas);
  for (std::int32_t l = 0; l < n_areas; ++l)
    d.population[l] = std::round(rng.uniform(spec.population_min, spec.population_max));

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n_x);
  x.col(0).setOnes();
  std::vector<std::string> names{"intercept"};
  for (std::int32_t k = 0; k < spec.n_area_covariates; ++k) {
    Eigen::VectorXd per_area(n_areas);
    for (std::int32_t l = 0; l < n_areas; ++l) per_area[l] = rng.normal();
    for (std::int32_t c = 0; c < n; ++c) x(c, 1 + k) = per_area[c % n_areas];
    names.push_back("area_" + std::to_string(k + 1));
    standardize_column(x.col(1 + k), n_areas, false, names.back());
  }

  // Tier schedule: no restriction in the first block, then each area moves to a
  // level in {none, tier 1..n} drawn afresh every block.
  const std::int32_t tier_col = 1 + spec.n_area_covariates;
  static const char* kTierNames[] = {"tier_II", "tier_III", "tier_IV"};
  for (std::int32_t k = 0; k < n_tiers; ++k)
    names.push_back(k < 3 ? kTierNames[k] : "tier_" + std::to_string(k + 2));
  if (n_tiers > 0) {
    for (int attempt = 0;; ++attempt) {
      x.middleCols(tier_col, n_tiers).setZero();
      for (std::int32_t l = 0; l < n_areas; ++l) {
        for (std::int32_t b = 1; b * spec.tier_block_weeks < n_times; ++b) {
          const auto level = static_cast<std::int32_t>(rng.below(n_tiers + 1));
          if (level == 0) continue;
          for (std::int32_t t = b * spec.tier_block_weeks;
               t < std::min(n_times, (b + 1) * spec.tier_block_weeks); ++t)
            x(l + n_areas * t, tier_col + level - 1) = 1.0;
        }
      }
      bool ok = true;
      for (std::int32_t k = 0; k < n_tiers; ++k) {
        const double s = x.col(tier_col + k).sum();
        ok = ok && s > 0.0 && s < n;
      }
      if (ok) break;
      if (attempt > 100)
        throw ValidationError("panel too short to give every tier indicator some variation");
    }
  }
  if (seasons) {
    const std::int32_t sc = tier_col + n_tiers;
    names.push_back("summer");
    names.push_back("christmas");
    for (std::int32_t t = 0; t < n_times; ++t) {
      const bool su = t >= spec.summer.start && t < spec.summer.end;
      const bool ch = t >= spec.christmas.start && t < spec.christmas.end;
      for (std::int32_t l = 0; l < n_areas; ++l) {
        x(l + n_areas * t, sc) = su ? 1.0 : 0.0;
        x(l + n_areas * t, sc + 1) = ch ? 1.0 : 0.0;
      }
    }
  }
  d.designs.x = std::move(x);
  d.designs.x_names = std::move(names);
  d.designs.v = Eigen::MatrixXd::Ones(n, 1);
  d.designs.v_names = {"intercept"};
  return d;
}

ParameterSet draw_true_params(const SimSpec& spec, const AreaGraph& graph, std::int32_t n_x,
                              Rng& rng) {
  const auto n_tiers = static_cast<std::int32_t>(spec.tier_effects.size());
  const bool seasons = has_covariates(spec.model.variant);
  const std::int32_t expected = 1 + spec.n_area_covariates + n_tiers + (seasons ? 2 : 0);
  if (n_x != expected)
    throw ValidationError("design has " + std::to_string(n_x) + " columns, spec implies " +
                          std::to_string(expected));
  ParameterSet p;
  p.beta.resize(n_x);
  p.beta[0] = rng.normal(-0.5, 1.0);
  for (std::int32_t k = 0; k < spec.n_area_covariates; ++k)
    p.beta[1 + k] = rng.normal(0.0, spec.area_coef_sd);
  for (std::int32_t k = 0; k < n_tiers; ++k) p.beta[1 + spec.n_area_covariates + k] = spec.tier_effects[k];
  if (seasons) {
    p.beta[n_x - 2] = spec.summer_effect;
    p.beta[n_x - 1] = spec.christmas_effect;
  }
  p.eta = Eigen::VectorXd::Constant(1, rng.normal(0.0, 1.0));
  p.w = spec.true_w;

  const auto v = spec.model.variant;
  auto draw_field = [&](CarParams& theta, StField& star, double scale) {
    theta.alpha = rng.uniform_open();
    theta.rho = rng.uniform_open();
    theta.sigma = rng.half_normal(scale);
    star = sample_car_field(graph, CarParams{theta.alpha, 0.0, 1.0}, spec.n_times, rng);
  };
  if (has_phi(v)) draw_field(p.theta_phi, p.phi_star, spec.true_sigma_phi_scale);
  if (has_psi(v)) draw_field(p.theta_psi, p.psi_star, spec.true_sigma_psi_scale);
  return p;
}

std::optional<CountPanel> gen_panel(const SimSpec& spec, const SimDesign& design,
                                    const AreaGraph& graph, const ParameterSet& params, Rng& rng,
                                    const CountMatrix* pre_counts) {
  const auto n_areas = graph.n_areas();
  const auto n_times = spec.n_times;
  const auto tau = spec.model.tau;
  CountMatrix pre(n_areas, tau);
  if (pre_counts) {
    if (pre_counts->rows() != n_areas || pre_counts->cols() < tau)
      throw ValidationError("supplied pre-period counts have the wrong shape");
    pre = *pre_counts;
  } else {
    for (std::int32_t l = 0; l < n_areas; ++l)
      for (std::int32_t p = 0; p < tau; ++p)
        pre(l, p) = rng.poisson(spec.pre_rate_per_10k * design.population[l] / 10000.0);
  }
  CountPanel panel =
      CountPanel::make(CountMatrix::Zero(n_areas, n_times), std::move(pre), design.population);

  const auto v = spec.model.variant;
  const StField phi = has_phi(v) ? noncentered(params.phi_star, params.theta_phi)
                                 : StField::Zero(n_areas, n_times);
  const StField psi = has_psi(v) ? noncentered(params.psi_star, params.theta_psi)
                                 : StField::Zero(n_areas, n_times);
  const auto& x = design.designs.x;
  const auto& vm = design.designs.v;
  const std::span<const double> w(params.w.data(), std::size_t(params.w.size()));
  for (std::int32_t t = 0; t < n_times; ++t) {
    for (std::int32_t l = 0; l < n_areas; ++l) {
      const auto c = l + n_areas * t;
      const double r = std::exp(x.row(c).head(params.beta.size()).dot(params.beta) + phi(l, t));
      const double b = panel.offset[l] *
                       std::exp(vm.row(c).head(params.eta.size()).dot(params.eta) + psi(l, t));
      const double lam =
          (weighted_lag(panel, w, l, t) * r + b) * depletion(panel, spec.model, l, t);
      if (!std::isfinite(lam) || lam * 10000.0 / design.population[l] > spec.max_rate_per_10k)
        return std::nullopt;
      panel.counts(l, t) = rng.poisson(lam);
    }
  }
  return panel;
}

MaskMatrix holdout_mask(std::int32_t n_areas, std::int32_t n_times, double fraction, Rng& rng) {
  const auto n = static_cast<std::size_t>(n_areas) * n_times;
  const auto n_out = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n_out; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  MaskMatrix mask = MaskMatrix::Constant(n_areas, n_times, true);
  for (std::size_t i = 0; i < n_out; ++i) mask(idx[i] % n_areas, idx[i] / n_areas) = false;
  return mask;
}

SimReplicate simulate_replicate(const SimSpec& spec, const AreaGraph& graph, std::int32_t index) {
  spec.validate();
  SimReplicate rep;
  // Covariates and populations stay fixed across replicates.
  Rng design_rng(mix_seed(spec.seed, kDesignStream), 0);
  rep.design = make_sim_design(spec, graph.n_areas(), design_rng);
  Rng rng(mix_seed(spec.seed, kReplicateStream, static_cast<std::uint64_t>(index)), 0);
  for (std::int32_t attempt = 0; attempt < spec.max_redraws; ++attempt) {
    ParameterSet truth = draw_true_params(
        spec, graph, static_cast<std::int32_t>(rep.design.designs.x.cols()), rng);
    auto panel = gen_panel(spec, rep.design, graph, truth, rng);
    if (!panel) {
      ++rep.redraws;
      continue;
    }
    panel->in_sample = holdout_mask(graph.n_areas(), spec.n_times, spec.holdout, rng);
    rep.truth = std::move(truth);
    rep.panel = std::move(*panel);
    return rep;
  }
  throw NumericError("replicate " + std::to_string(index) + ": no admissible trajectory in " +
                     std::to_string(spec.max_redraws) + " draws");
}

RecoveryReport run_recovery(const SimSpec& spec, const RecoveryOptions& options) {
  spec.validate();
  const AreaGraph graph = spec.make_graph();
  RecoveryReport report;
  report.rhat_threshold = options.rhat_threshold;
  report.weight_tolerance = options.weight_tolerance;
  report.n_replicates = spec.replicates;

  std::vector<double> sq, hits;  // per scalar parameter
  double phi_sq = 0, phi_hit = 0, psi_sq = 0, psi_hit = 0;
  std::int64_t phi_n = 0, psi_n = 0;
  std::int64_t weight_ok = 0, included = 0;

  for (std::int32_t b = 0; b < spec.replicates; ++b) {
    const auto t0 = std::chrono::steady_clock::now();
    SimReplicate rep = simulate_replicate(spec, graph, b);
    const Model model(graph, rep.panel, rep.design.designs, spec.model);
    FitOptions fo;
    fo.nuts = options.nuts;
    fo.nuts.seed = mix_seed(options.nuts.seed, static_cast<std::uint64_t>(b));
    fo.rhat_threshold = options.rhat_threshold;
    const FitResult fit = fit_model(model, fo);

    ReplicateRecord rec;
    rec.index = b;
    rec.max_rhat = fit.max_rhat;
    rec.divergences = fit.draws.total_divergences();
    rec.redraws = rep.redraws;
    rec.in_sample = fit.score.in_sample;
    rec.out_of_sample = fit.score.out_of_sample;
    rec.excluded = !(fit.max_rhat <= options.rhat_threshold);

    const Eigen::VectorXd truth = constrained_row(model, rep.truth);
    const auto n_cells = static_cast<std::size_t>(model.n_cells());
    const auto v = spec.model.variant;
    const std::size_t n_fields = (has_phi(v) ? n_cells : 0) + (has_psi(v) ? n_cells : 0);
    const std::size_t n_scalar = fit.summary.size() - n_fields;
    if (report.params.empty()) {
      for (std::size_t j = 0; j < n_scalar; ++j) report.params.push_back({fit.summary[j].parameter});
      sq.assign(n_scalar, 0.0);
      hits.assign(n_scalar, 0.0);
    }
    const std::size_t w_at = static_cast<std::size_t>(model.n_beta() + model.n_eta());
    bool w_ok = true;
    for (std::int32_t i = 0; i < model.config().tau; ++i)
      w_ok = w_ok && std::abs(fit.summary[w_at + i].mean - truth[w_at + i]) <= options.weight_tolerance;
    rec.weights_within_tol = w_ok;

    if (!rec.excluded) {
      ++included;
      if (w_ok) ++weight_ok;
      for (std::size_t j = 0; j < n_scalar; ++j) {
        const auto& row = fit.summary[j];
        sq[j] += (row.mean - truth[j]) * (row.mean - truth[j]);
        hits[j] += (truth[j] >= row.q025 && truth[j] <= row.q975) ? 1.0 : 0.0;
      }
      std::size_t at = n_scalar;
      auto field = [&](double& s, double& h, std::int64_t& cnt) {
        for (std::size_t c = 0; c < n_cells; ++c, ++at) {
          const auto& row = fit.summary[at];
          s += (row.mean - truth[at]) * (row.mean - truth[at]);
          h += (truth[at] >= row.q025 && truth[at] <= row.q975) ? 1.0 : 0.0;
          ++cnt;
        }
      };
      if (has_phi(v)) field(phi_sq, phi_hit, phi_n);
      if (has_psi(v)) field(psi_sq, psi_hit, psi_n);
      report.in_rmse_rate += rec.in_sample.rmse_rate;
      report.in_relative_mse += rec.in_sample.relative_mse;
      report.in_coverage += rec.in_sample.coverage;
      report.out_rmse_rate += rec.out_of_sample.rmse_rate;
      report.out_relative_mse += rec.out_of_sample.relative_mse;
      report.out_coverage += rec.out_of_sample.coverage;
    } else {
      ++report.n_excluded;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.verbose) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "replicate %d: max_rhat=%.3f divergences=%lld %s %.1fs", b, rec.max_rhat,
                    static_cast<long long>(rec.divergences), rec.excluded ? "excluded" : "kept",
                    rec.seconds);
      warn(buf);
    }
    report.replicates.push_back(rec);
  }

  if (included > 0) {
    const double n = static_cast<double>(included);
    double total_hits = 0;
    for (std::size_t j = 0; j < report.params.size(); ++j) {
      report.params[j].rmse = std::sqrt(sq[j] / n);
      report.params[j].coverage = hits[j] / n;
      report.params[j].n = included;
      total_hits += hits[j];
    }
    report.pooled_param_coverage = total_hits / (n * static_cast<double>(report.params.size()));
    report.weights_within_tol_fraction = static_cast<double>(weight_ok) / n;
    report.in_rmse_rate /= n;
    report.in_relative_mse /= n;
    report.in_coverage /= n;
    report.out_rmse_rate /= n;
    report.out_relative_mse /= n;
    report.out_coverage /= n;
  }
  report.phi = {"phi", phi_n ? std::sqrt(phi_sq / phi_n) : 0.0, phi_n ? phi_hit / phi_n : 0.0, phi_n};
  report.psi = {"psi", psi_n ? std::sqrt(psi_sq / psi_n) : 0.0, psi_n ? psi_hit / psi_n : 0.0, psi_n};
  const auto field_n = phi_n + psi_n;
  report.pooled_field_coverage = field_n ? (phi_hit + psi_hit) / static_cast<double>(field_n) : 0.0;
  return report;
}

void write_recovery_csv(std::ostream& os, const RecoveryReport& r) {
  os << "kind,name,rmse,coverage,n\n";
  char buf[256];
  auto row = [&](const char* kind, const std::string& name, double rmse, double cov,
                 std::int64_t n) {
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%lld\n", rmse, cov, static_cast<long long>(n));
    os << kind << ',' << name << buf;
  };
  for (const auto& p : r.params) row("parameter", p.name, p.rmse, p.coverage, p.n);
  if (r.phi.n) row("field", "phi", r.phi.rmse, r.phi.coverage, r.phi.n);
  if (r.psi.n) row("field", "psi", r.psi.rmse, r.psi.coverage, r.psi.n);
  const std::int64_t kept = r.n_replicates - r.n_excluded;
  row("predictive", "in_sample_rate", r.in_rmse_rate, r.in_coverage, kept);
  row("predictive", "out_of_sample_rate", r.out_rmse_rate, r.out_coverage, kept);
  row("predictive", "in_sample_relative_mse", r.in_relative_mse, r.in_coverage, kept);
  row("predictive", "out_of_sample_relative_mse", r.out_relative_mse, r.out_coverage, kept);
}

void write_recovery_manifest(std::ostream& os, const SimSpec& spec, const RecoveryOptions& options,
                             const RecoveryReport& r) {
  nlohmann::ordered_json j;
  const std::string canon = spec.canonical();
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  j["rng"] = std::string(kRngAlgorithm);
  j["seed"] = spec.seed;
  j["spec_hash"] = hash;
  j["spec"] = canon;
  j["replicates"] = r.n_replicates;
  j["excluded"] = r.n_excluded;
  j["rhat_threshold"] = r.rhat_threshold;
  j["sampler"] = {{"chains", options.nuts.n_chains},
                  {"warmup", options.nuts.n_warmup},
                  {"iter", options.nuts.n_iter},
                  {"thin", options.nuts.thin},
                  {"seed", options.nuts.seed}};
  j["pooled_param_coverage"] = r.pooled_param_coverage;
  j["pooled_field_coverage"] = r.pooled_field_coverage;
  j["weights_within_tolerance"] = r.weights_within_tol_fraction;
  j["predictive"] = {{"in_sample", {{"rmse_rate", r.in_rmse_rate},
                                    {"relative_mse", r.in_relative_mse},
                                    {"coverage", r.in_coverage}}},
                     {"out_of_sample", {{"rmse_rate", r.out_rmse_rate},
                                        {"relative_mse", r.out_relative_mse},
                                        {"coverage", r.out_coverage}}}};
  auto& reps = j["replicate_log"] = nlohmann::ordered_json::array();
  for (const auto& rec : r.replicates)
    reps.push_back({{"index", rec.index},
                    {"excluded", rec.excluded},
                    {"max_rhat", rec.max_rhat},
                    {"divergences", rec.divergences},
                    {"redraws", rec.redraws},
                    {"seconds", rec.seconds}});
  os << j.dump(2) << '\n';
}

}  // namespace poiar
