// Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed here.
// Usage: acceptance [criterion numbers...]   (all when none given)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poiar/car.hpp"
#include "poiar/diagnostics.hpp"
#include "poiar/fit.hpp"
#include "poiar/graph.hpp"
#include "poiar/log.hpp"
#include "poiar/model.hpp"
#include "poiar/rng.hpp"
#include "poiar/sampler.hpp"
#include "poiar/simulate.hpp"
#include "support.hpp"

using namespace poiar;
using namespace poiar::testing;

namespace {

// Pinned limits.
constexpr double kDenseTol = 1e-8;             // 1, 2
constexpr double kEquivSeconds = 30.0;         // 1
constexpr double kGradRelTol = 1e-5;           // 3
constexpr double kGradSeconds = 60.0;          // 3
constexpr double kNormalMeanTol = 0.05;        // 4
constexpr double kNormalSdLo = 0.93, kNormalSdHi = 1.07;
constexpr double kNormalRhat = 1.01;
constexpr double kNormalSeconds = 30.0;
constexpr double kParamCoverage = 0.85;        // 5
constexpr double kFieldCoverage = 0.85;
constexpr double kRecoverySeconds = 45 * 60.0;
constexpr double kRecoveryRhatExclusion = 1.1;
constexpr double kPredInCoverage = 0.95;       // 6
constexpr double kPredOutCoverage = 0.90;
constexpr double kRankingSe = 10.0;            // 7
constexpr double kWaicTol = 1e-10;             // 8
constexpr double kSpeedup = 10.0;              // 9
constexpr double kGradMillis = 50.0;
constexpr double kWeightTol = 0.05;            // 10
constexpr double kWeightFraction = 0.80;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Type-7 quantile, written out independently of the library.
double q7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

double paired_se(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd d = (a - b).array();
  const double n = double(d.size());
  return std::sqrt(n * (d - d.mean()).square().sum() / (n - 1));
}

// ---------------------------------------------------------------------------

Outcome sparse_dense_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst_pdf = 0, worst_det = 0;
  for (int g = 0; g < 100; ++g) {
    const auto n = static_cast<std::int32_t>(1 + rng.below(50));
    const AreaGraph graph = random_graph(n, rng.uniform(0.02, 0.3), rng);
    const EigenSpectrum spec = eigen_spectrum(graph);
    const double alpha = rng.uniform(0.01, 0.99), sigma = rng.uniform(0.1, 3.0);
    const Eigen::VectorXd x = random_point(n, 2.0, rng);
    const Eigen::MatrixXd q = dense_precision(graph.adjacency_dense(), alpha);
    const Eigen::MatrixXd cov = sigma * sigma * q.partialPivLu().inverse();
    worst_pdf = std::max(worst_pdf,
                         std::abs(leroux_logpdf(graph, spec, {x.data(), std::size_t(n)}, alpha, sigma) -
                                  dense_mvn_covariance_logpdf(x, cov)));
    worst_det = std::max(worst_det, std::abs(log_det_q(spec, alpha) - dense_log_det(q)));
  }
  const double secs = since(t0);
  return {worst_pdf < kDenseTol && worst_det < kDenseTol && secs < kEquivSeconds,
          "100 graphs, max |logpdf err| " + fmt("%.2e", worst_pdf) + ", max |logdet err| " +
              fmt("%.2e", worst_det) + " (limit 1e-8), " + fmt("%.2f", secs) + " s (limit 30 s)"};
}

Outcome determinant_identity() {
  Rng rng(202);
  double worst_sum = 0, worst_lib = 0;
  const std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
  for (int g = 0; g < 20; ++g) {
    const auto n = static_cast<std::int32_t>(5 + rng.below(46));
    const AreaGraph graph = random_graph(n, rng.uniform(0.05, 0.3), rng);
    const Eigen::MatrixXd w = graph.adjacency_dense();
    Eigen::MatrixXd m = w + Eigen::MatrixXd::Identity(n, n);
    m.diagonal() -= w.rowwise().sum();
    const Eigen::VectorXd lambda = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues();
    const EigenSpectrum spec = eigen_spectrum(graph);
    for (double a : alphas) {
      double s = 0;
      for (Eigen::Index i = 0; i < n; ++i) s += std::log(1 - a * lambda[i]);
      const double dense = dense_log_det(dense_precision(w, a));
      worst_sum = std::max(worst_sum, std::abs(s - dense));
      worst_lib = std::max(worst_lib, std::abs(log_det_q(spec, a) - dense));
    }
  }
  return {worst_sum < kDenseTol && worst_lib < kDenseTol,
          "20 graphs x 11 alphas, eigen-sum vs LU " + fmt("%.2e", worst_sum) + ", library vs LU " +
              fmt("%.2e", worst_lib) + " (limit 1e-8)"};
}

Outcome gradient_contract() {
  const auto t0 = Clock::now();
  const Fixture f = make_fixture(3, 3, 4, 303);
  double worst = 0;
  std::size_t dim = 0;
  for (FieldCoordinates fc : {FieldCoordinates::whitened, FieldCoordinates::innovations}) {
    const Model m = make_model(f, Variant::d, fc);
    dim = m.layout().dim;
    PosteriorEvaluator eval(m);
    Rng rng(304);
    for (int k = 0; k < 10; ++k) {
      const Eigen::VectorXd z = random_point(m.layout().dim, 1.0, rng);
      const auto [lp, g] = log_posterior_grad(m, {z.data(), std::size_t(z.size())});
      const Eigen::VectorXd fd = finite_difference_gradient(
          [&](const Eigen::VectorXd& x) { return eval.log_density({x.data(), std::size_t(x.size())}); },
          z);
      worst = std::max(worst, max_relative_error(g, fd));
    }
  }
  const double secs = since(t0);
  return {worst < kGradRelTol && secs < kGradSeconds,
          "3x3 lattice, T=4, variant d, " + std::to_string(dim) +
              " coordinates, 10 points in each field coordinate system, max rel err " +
              fmt("%.2e", worst) + " (limit 1e-5), " + fmt("%.2f", secs) + " s (limit 60 s)"};
}

Outcome sampler_calibration() {
  const auto t0 = Clock::now();
  NutsConfig cfg;
  cfg.n_chains = 4;
  cfg.n_warmup = 1000;
  cfg.n_iter = 2000;
  cfg.seed = 404;
  const Draws d = nuts_sample(
      [] {
        return LogDensityFn([](std::span<const double> z, std::span<double> g) {
          g[0] = -z[0];
          return -0.5 * z[0] * z[0];
        });
      },
      1, cfg);
  const double secs = since(t0);
  ChainMatrix c(d.draws_per_chain(), d.n_chains());
  for (std::size_t k = 0; k < d.n_chains(); ++k) c.col(k) = d.chains[k].col(0);
  const double mean = c.mean();
  const double sd = std::sqrt((c.array() - mean).square().sum() / double(c.size() - 1));
  const double rhat = split_rhat(c).value;
  const auto sat = d.total_treedepth_saturations();
  return {std::abs(mean) < kNormalMeanTol && sd > kNormalSdLo && sd < kNormalSdHi &&
              rhat < kNormalRhat && sat == 0 && secs < kNormalSeconds,
          "4x2000 draws, mean " + fmt("%.4f", mean) + ", sd " + fmt("%.4f", sd) + ", R-hat " +
              fmt("%.4f", rhat) + ", saturations " + std::to_string(sat) + ", " +
              fmt("%.2f", secs) + " s"};
}

struct RecoveryOutcome {
  Outcome params, predictive, weights;
};

RecoveryOutcome recovery_study() {
  const auto t0 = Clock::now();
  SimSpec spec;  // 5x5 lattice, T=30, 20 replicates, 20% holdout, variant d
  spec.seed = 505;
  const AreaGraph graph = spec.make_graph();
  NutsConfig nuts;
  nuts.n_chains = 2;
  nuts.n_warmup = 750;
  nuts.n_iter = 750;

  std::map<std::string, std::pair<double, double>> per_param;  // hits, count
  double param_hits = 0, param_n = 0, field_hits = 0, field_n = 0;
  double in_hits = 0, in_n = 0, out_hits = 0, out_n = 0;
  double lib_in = 0, lib_out = 0;
  int kept = 0, excluded = 0, weights_ok = 0;
  Eigen::Vector3d w_sd_sum = Eigen::Vector3d::Zero();
  std::mt19937_64 pred_rng(606);
  std::ofstream log("acceptance_recovery.csv");
  log << "replicate,max_rhat,excluded,divergences,param_coverage,field_coverage,"
         "pred_in_coverage,pred_out_coverage,w1,w2,w3,w1_sd,w2_sd,w3_sd,seconds\n";

  for (std::int32_t b = 0; b < spec.replicates; ++b) {
    const auto tb = Clock::now();
    const SimReplicate rep = simulate_replicate(spec, graph, b);
    const Model model(graph, rep.panel, rep.design.designs, spec.model);
    FitOptions fo;
    fo.nuts = nuts;
    fo.nuts.seed = mix_seed(707, static_cast<std::uint64_t>(b));
    const FitResult fit = fit_model(model, fo);
    const bool excl = !(fit.max_rhat <= kRecoveryRhatExclusion);

    const Eigen::VectorXd truth = constrained_row(model, rep.truth);
    const auto& names = fit.constrained.names;
    double rp_h = 0, rp_n = 0, rf_h = 0, rf_n = 0;
    Eigen::Vector3d w_mean = Eigen::Vector3d::Zero(), w_sd = Eigen::Vector3d::Zero();
    for (std::size_t j = 0; j < names.size(); ++j) {
      std::vector<double> v;
      for (const auto& ch : fit.constrained.chains)
        for (Eigen::Index k = 0; k < ch.rows(); ++k) v.push_back(ch(k, Eigen::Index(j)));
      const double lo = q7(v, 0.025), hi = q7(v, 0.975);
      const double hit = truth[j] >= lo && truth[j] <= hi ? 1.0 : 0.0;
      const bool field = names[j].rfind("phi[", 0) == 0 || names[j].rfind("psi[", 0) == 0;
      if (field) {
        rf_h += hit;
        rf_n += 1;
      } else {
        rp_h += hit;
        rp_n += 1;
        if (!excl) {
          per_param[names[j]].first += hit;
          per_param[names[j]].second += 1;
        }
      }
      if (names[j].rfind("w[", 0) == 0) {
        const int i = names[j][2] - '1';
        double s = 0, ss = 0;
        for (double x : v) s += x;
        w_mean[i] = s / double(v.size());
        for (double x : v) ss += (x - w_mean[i]) * (x - w_mean[i]);
        w_sd[i] = std::sqrt(ss / double(v.size() - 1));
      }
    }
    const bool w_ok = (w_mean - spec.true_w).cwiseAbs().maxCoeff() <= kWeightTol;

    // Posterior predictive intervals from the rate draws.
    double ri_h = 0, ri_n = 0, ro_h = 0, ro_n = 0;
    for (std::int32_t c = 0; c < model.n_cells(); ++c) {
      std::vector<double> y(fit.lambda.rows());
      for (Eigen::Index s = 0; s < fit.lambda.rows(); ++s)
        y[s] = double(std::poisson_distribution<long long>(fit.lambda(s, c))(pred_rng));
      const double lo = q7(y, 0.025), hi = q7(y, 0.975);
      const double obs = model.y()[c];
      const double hit = obs >= lo && obs <= hi ? 1.0 : 0.0;
      if (model.in_sample()[c]) {
        ri_h += hit;
        ri_n += 1;
      } else {
        ro_h += hit;
        ro_n += 1;
      }
    }
    const double secs = since(tb);
    log << b << ',' << fit.max_rhat << ',' << int(excl) << ',' << fit.draws.total_divergences()
        << ',' << rp_h / rp_n << ',' << rf_h / rf_n << ',' << ri_h / ri_n << ',' << ro_h / ro_n
        << ',' << w_mean[0] << ',' << w_mean[1] << ',' << w_mean[2] << ',' << w_sd[0] << ','
        << w_sd[1] << ',' << w_sd[2] << ',' << secs << '\n';
    std::cerr << "  replicate " << b << ": max R-hat " << fmt("%.3f", fit.max_rhat)
              << (excl ? " (excluded)" : "") << ", params " << fmt("%.3f", rp_h / rp_n)
              << ", fields " << fmt("%.3f", rf_h / rf_n) << ", pred in/out "
              << fmt("%.3f", ri_h / ri_n) << "/" << fmt("%.3f", ro_h / ro_n) << ", w ("
              << fmt("%.3f", w_mean[0]) << ", " << fmt("%.3f", w_mean[1]) << ", "
              << fmt("%.3f", w_mean[2]) << "), " << fmt("%.1f", secs) << " s\n";
    if (excl) {
      ++excluded;
      continue;
    }
    ++kept;
    param_hits += rp_h;
    param_n += rp_n;
    field_hits += rf_h;
    field_n += rf_n;
    in_hits += ri_h;
    in_n += ri_n;
    out_hits += ro_h;
    out_n += ro_n;
    lib_in += fit.score.in_sample.coverage;
    lib_out += fit.score.out_of_sample.coverage;
    weights_ok += w_ok;
    w_sd_sum += w_sd;
  }
  const double secs = since(t0);
  std::ofstream per("acceptance_recovery_params.csv");
  per << "parameter,coverage,replicates\n";
  for (const auto& [name, hc] : per_param) per << name << ',' << hc.first / hc.second << ',' << hc.second << '\n';

  RecoveryOutcome r;
  if (kept == 0) {
    r.params = r.predictive = r.weights = {false, "every replicate exceeded the R-hat exclusion line"};
    return r;
  }
  const double pc = param_hits / param_n, fc = field_hits / field_n;
  const std::string tally = std::to_string(kept) + "/" + std::to_string(spec.replicates) +
                            " replicates kept (R-hat <= 1.1)";
  r.params = {pc >= kParamCoverage && fc >= kFieldCoverage && secs <= kRecoverySeconds,
              tally + ", pooled parameter coverage " + fmt("%.3f", pc) +
                  " (limit 0.85), field coverage " + fmt("%.3f", fc) + " (limit 0.85), " +
                  fmt("%.0f", secs) + " s (limit 2700 s)"};
  const double ic = in_hits / in_n, oc = out_hits / out_n;
  r.predictive = {ic >= kPredInCoverage && oc >= kPredOutCoverage,
                  "in-sample coverage " + fmt("%.3f", ic) + " (limit 0.95), out-of-sample " +
                      fmt("%.3f", oc) + " (limit 0.90); library scorer " +
                      fmt("%.3f", lib_in / kept) + "/" + fmt("%.3f", lib_out / kept)};
  const double wf = double(weights_ok) / kept;
  r.weights = {wf >= kWeightFraction,
               std::to_string(weights_ok) + "/" + std::to_string(kept) +
                   " kept replicates with every posterior-mean weight within 0.05 (" +
                   fmt("%.2f", wf) + ", limit 0.80); average posterior sd of w " +
                   fmt("%.3f", w_sd_sum[0] / kept) + "/" + fmt("%.3f", w_sd_sum[1] / kept) + "/" +
                   fmt("%.3f", w_sd_sum[2] / kept)};
  return r;
}

Outcome model_ranking() {
  SimSpec spec;
  spec.seed = 808;
  const AreaGraph graph = spec.make_graph();
  const SimReplicate rep = simulate_replicate(spec, graph, 0);
  FitOptions fo;
  fo.nuts.n_chains = 2;
  fo.nuts.n_warmup = 750;
  fo.nuts.n_iter = 750;
  fo.nuts.seed = 809;
  ModelConfig cd = spec.model, ca = spec.model;
  cd.variant = Variant::d;
  ca.variant = Variant::a;
  const Model md(graph, rep.panel, rep.design.designs, cd);
  const Model ma(graph, rep.panel, rep.design.designs, ca);
  const FitResult fd = fit_model(md, fo);
  const FitResult fa = fit_model(ma, fo);
  const auto& wd = fd.score.waic;
  const auto& wa = fa.score.waic;
  const auto& ld = fd.score.loo;
  const auto& la = fa.score.loo;
  const double se_w = paired_se(wa.pointwise, wd.pointwise);
  const double se_l = paired_se(ld.pointwise, la.pointwise);
  const double dw = wa.waic - wd.waic, dl = ld.elpd_loo - la.elpd_loo;
  return {dw >= kRankingSe * se_w && dl >= kRankingSe * se_l,
          "waic d " + fmt("%.1f", wd.waic) + " vs a " + fmt("%.1f", wa.waic) + ": lower by " +
              fmt("%.1f", dw) + " = " + fmt("%.1f", dw / se_w) + " paired se; elpd_loo d " +
              fmt("%.1f", ld.elpd_loo) + " vs a " + fmt("%.1f", la.elpd_loo) + ": higher by " +
              fmt("%.1f", dl) + " = " + fmt("%.1f", dl / se_l) +
              " paired se (limit 10); per-model se waic " + fmt("%.1f", wd.se) + "/" +
              fmt("%.1f", wa.se) + ", loo " + fmt("%.1f", ld.se) + "/" + fmt("%.1f", la.se)};
}

Outcome waic_definition() {
  Rng rng(909);
  Eigen::MatrixXd ll(200, 3);
  for (auto& v : ll.reshaped()) v = -2.0 + 0.7 * rng.normal();
  double lppd = 0, p = 0;
  for (int i = 0; i < 3; ++i) {
    double s = 0, mean = 0, var = 0;
    for (int k = 0; k < 200; ++k) s += std::exp(ll(k, i));
    for (int k = 0; k < 200; ++k) mean += ll(k, i) / 200;
    for (int k = 0; k < 200; ++k) var += (ll(k, i) - mean) * (ll(k, i) - mean) / 199;
    lppd += std::log(s / 200);
    p += var;
  }
  const double brute = -2 * (lppd - p);
  const double err = std::abs(waic(ll).waic - brute);
  return {err < kWaicTol, "3 cells x 200 draws, waic " + fmt("%.12f", brute) + ", |err| " +
                              fmt("%.2e", err) + " (limit 1e-10)"};
}

// 313 areas: a 16x20 rook lattice with its last 7 cells removed.
AreaGraph lattice_313() {
  const AreaGraph full = lattice_graph(16, 20);
  std::vector<Edge> edges;
  for (const auto& e : full.edges())
    if (e.i < 313 && e.j < 313) edges.push_back(e);
  return build_graph(std::move(edges), 313);
}

Outcome performance() {
  const AreaGraph g = lattice_313();
  const EigenSpectrum spec = eigen_spectrum(g);
  const Eigen::MatrixXd w = g.adjacency_dense();
  Rng rng(1001);
  StField field(313, 45);
  for (auto& v : field.reshaped()) v = rng.normal();
  const CarParams p{0.6, 0.7, 0.5};
  const int reps = 100;
  double sink = 0;
  auto t0 = Clock::now();
  for (int k = 0; k < reps; ++k) sink += car_ar_logpdf(g, spec, field, p);
  const double sparse = since(t0) / reps;
  t0 = Clock::now();
  for (int k = 0; k < reps; ++k) sink += dense_car_ar_slices(w, field, p.alpha, p.rho, p.sigma);
  const double dense = since(t0) / reps;
  const double agree = std::abs(car_ar_logpdf(g, spec, field, p) -
                                dense_car_ar_slices(w, field, p.alpha, p.rho, p.sigma));

  SimSpec s;
  s.graph = g;
  s.n_times = 45;
  s.seed = 1002;
  const SimReplicate rep = simulate_replicate(s, g, 0);
  const Model m(g, rep.panel, rep.design.designs, s.model);
  PosteriorEvaluator eval(m);
  Eigen::VectorXd z = untransform(m.layout(), rep.truth);
  Eigen::VectorXd grad(z.size());
  std::vector<double> ms;
  for (int k = 0; k < 50; ++k) {
    z[0] += 1e-3 * rng.normal();
    t0 = Clock::now();
    sink += eval({z.data(), std::size_t(z.size())}, {grad.data(), std::size_t(grad.size())});
    ms.push_back(1e3 * since(t0));
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms[ms.size() / 2], worst = ms.back();
  const double speedup = dense / sparse;
  return {speedup >= kSpeedup && worst < kGradMillis && agree < 1e-6 && std::isfinite(sink),
          "L=313, T=45: sparse " + fmt("%.1f", sparse * 1e6) + " us vs dense " +
              fmt("%.1f", dense * 1e6) + " us per evaluation (" + fmt("%.0f", speedup) +
              "x, limit 10x, values agree to " + fmt("%.1e", agree) +
              "); log-posterior gradient over " + std::to_string(m.layout().dim) +
              " coordinates: median " + fmt("%.2f", median) + " ms, worst " + fmt("%.2f", worst) +
              " ms (limit 50 ms)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.count(n); };

  int failures = 0;
  auto report = [&](int n, const char* title, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << title
              << "): " << o.detail << std::endl;
    failures += !o.pass;
  };
  // Recovery replicates log progress through the warning sink; keep stderr quiet otherwise.
  set_warning_sink([](const std::string& msg) {
    if (msg.find("connected components") == std::string::npos) std::cerr << "warning: " << msg << "\n";
  });

  if (want(1)) report(1, "sparse vs dense equivalence", sparse_dense_equivalence());
  if (want(2)) report(2, "determinant identity", determinant_identity());
  if (want(3)) report(3, "gradient contract", gradient_contract());
  if (want(4)) report(4, "sampler calibration", sampler_calibration());
  if (want(5) || want(6) || want(10)) {
    const RecoveryOutcome r = recovery_study();
    if (want(5)) report(5, "recovery study coverage", r.params);
    if (want(6)) report(6, "predictive calibration", r.predictive);
    if (want(10)) report(10, "weight identifiability", r.weights);
  }
  if (want(7)) report(7, "model ranking", model_ranking());
  if (want(8)) report(8, "waic definition", waic_definition());
  if (want(9)) report(9, "performance", performance());
  return failures == 0 ? 0 : 1;
}
