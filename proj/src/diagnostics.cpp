#include "poiar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include <boost/math/distributions/normal.hpp>

#include "poiar/error.hpp"
#include "poiar/rng.hpp"

namespace poiar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Halves each chain (dropping the middle draw when the length is odd).
ChainMatrix split_chains(const ChainMatrix& x) {
  const auto n = x.rows() / 2;
  const auto m = x.cols();
  ChainMatrix out(n, 2 * m);
  for (Eigen::Index c = 0; c < m; ++c) {
    out.col(2 * c) = x.col(c).head(n);
    out.col(2 * c + 1) = x.col(c).tail(n);
  }
  return out;
}

double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

bool is_constant(const ChainMatrix& x) {
  return x.size() == 0 || (x.array() == x(0, 0)).all();
}

void check_shape(const ChainMatrix& x) {
  if (x.cols() < 1 || x.rows() < 4)
    throw ValidationError("diagnostics need at least 4 draws per chain");
}

}  // namespace

ChainMatrix rank_normalize(const ChainMatrix& draws) {
  const auto s = draws.size();
  std::vector<Eigen::Index> order(s);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const double* d = draws.data();
  std::stable_sort(order.begin(), order.end(), [d](auto a, auto b) { return d[a] < d[b]; });
  ChainMatrix out(draws.rows(), draws.cols());
  double* o = out.data();
  const boost::math::normal_distribution<double> normal;
  Eigen::Index i = 0;
  while (i < s) {
    Eigen::Index j = i;
    while (j + 1 < s && d[order[j + 1]] == d[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average 1-based rank
    const double z =
        boost::math::quantile(normal, (rank - 0.375) / (static_cast<double>(s) + 0.25));
    for (Eigen::Index k = i; k <= j; ++k) o[order[k]] = z;
    i = j + 1;
  }
  return out;
}

double split_rhat_basic(const ChainMatrix& draws) {
  check_shape(draws);
  const ChainMatrix x = split_chains(draws);
  const auto n = static_cast<double>(x.rows());
  const auto m = x.cols();
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    means[c] = x.col(c).mean();
    vars[c] = sample_variance(x.col(c));
  }
  const double w = vars.mean();
  const double b_over_n = sample_variance(means);
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  return std::sqrt(var_plus / w);
}

RhatResult split_rhat(const ChainMatrix& draws) {
  check_shape(draws);
  if (is_constant(draws)) return {1.0, true};
  const double bulk = split_rhat_basic(rank_normalize(draws));
  ChainMatrix folded(draws.rows(), draws.cols());
  {
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    const double med = quantile(v, 0.5);
    folded = (draws.array() - med).abs();
  }
  const double tail = is_constant(folded) ? bulk : split_rhat_basic(rank_normalize(folded));
  return {std::max(bulk, tail), false};
}

double ess_basic(const ChainMatrix& draws) {
  check_shape(draws);
  const ChainMatrix x = split_chains(draws);
  const auto n = x.rows();
  const auto m = x.cols();
  const double nd = static_cast<double>(n);

  Eigen::MatrixXd centered(n, m);
  Eigen::VectorXd means(m), chain_var(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    means[c] = x.col(c).mean();
    centered.col(c) = x.col(c).array() - means[c];
  }
  // Mean over chains of the biased autocovariance at lag t, computed on demand.
  auto mean_acov = [&](Eigen::Index t) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m; ++c)
      s += centered.col(c).head(n - t).dot(centered.col(c).tail(n - t)) / nd;
    return s / static_cast<double>(m);
  };
  const double acov0 = mean_acov(0);
  const double mean_var = acov0 * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += sample_variance(means);
  if (!(var_plus > 0.0)) return nd * m;

  std::vector<double> rho(n + 1, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0.0) rho[max_t + 1] = rho_even;
  // Initial monotone sequence.
  for (t = 1; t <= max_t - 2; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double ess = nd * static_cast<double>(m);
  double tau = -1.0 + rho[max_t + 1];
  for (Eigen::Index k = 0; k <= max_t; ++k) tau += 2.0 * rho[k];
  tau = std::max(tau, 1.0 / std::log10(ess));
  return ess / tau;
}

double ess_bulk(const ChainMatrix& draws) {
  check_shape(draws);
  if (is_constant(draws)) return static_cast<double>(draws.size());
  return ess_basic(rank_normalize(draws));
}

double log_mean_exp(std::span<const double> x) {
  if (x.empty()) throw ValidationError("log_mean_exp of an empty sequence");
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(x.size()));
}

WaicResult waic(const Eigen::MatrixXd& loglik) {
  const auto s = loglik.rows();
  const auto n = loglik.cols();
  if (s < 2) throw ValidationError("waic needs at least 2 draws");
  if (n < 1) throw ValidationError("waic needs at least 1 cell");
  WaicResult r;
  r.pointwise.resize(n);
  std::vector<double> col(s);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < s; ++k) col[k] = loglik(k, i);
    const double lppd = log_mean_exp(col);
    const double p = sample_variance(loglik.col(i));
    r.lppd += lppd;
    r.p_waic += p;
    r.pointwise[i] = -2.0 * (lppd - p);
  }
  r.elpd_waic = r.lppd - r.p_waic;
  r.waic = -2.0 * r.elpd_waic;
  r.se = n > 1 ? std::sqrt(static_cast<double>(n) * sample_variance(r.pointwise)) : 0.0;
  return r;
}

double quantile(std::span<const double> x, double p) {
  if (x.empty()) throw ValidationError("quantile of an empty sequence");
  std::vector<double> v(x.begin(), x.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  const double a = v[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(v.begin() + lo + 1, v.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

std::vector<PredictiveCell> predictive_cells(const Eigen::MatrixXd& lambda_draws, Rng& rng) {
  const auto s = lambda_draws.rows();
  if (s < 1) throw ValidationError("predictive scoring needs at least one draw");
  std::vector<PredictiveCell> cells(lambda_draws.cols());
  std::vector<double> y(s);
  for (Eigen::Index c = 0; c < lambda_draws.cols(); ++c) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < s; ++k) {
      y[k] = static_cast<double>(rng.poisson(lambda_draws(k, c)));
      total += y[k];
    }
    cells[c].mean = total / static_cast<double>(s);
    cells[c].lower = quantile(y, 0.025);
    cells[c].upper = quantile(y, 0.975);
  }
  return cells;
}

void score_predictions(std::span<const PredictiveCell> cells, std::span<const double> y,
                       std::span<const double> population,
                       std::span<const std::uint8_t> in_sample, PredictiveSplit& in,
                       PredictiveSplit& out) {
  if (y.size() != cells.size() || population.size() != cells.size() ||
      in_sample.size() != cells.size())
    throw ValidationError("predictive scoring inputs have mismatched lengths");
  struct Acc {
    double sq_rate = 0, sq = 0, y2 = 0, hit = 0, width = 0, width_rate = 0;
    std::int64_t n = 0;
  } acc[2];
  for (std::size_t c = 0; c < cells.size(); ++c) {
    Acc& a = acc[in_sample[c] ? 0 : 1];
    const double per = 10000.0 / population[c];
    const double err = cells[c].mean - y[c];
    a.sq_rate += (err * per) * (err * per);
    a.sq += err * err;
    a.y2 += y[c] * y[c];
    a.hit += (y[c] >= cells[c].lower && y[c] <= cells[c].upper) ? 1.0 : 0.0;
    a.width += cells[c].upper - cells[c].lower;
    a.width_rate += (cells[c].upper - cells[c].lower) * per;
    ++a.n;
  }
  auto finish = [](const Acc& a, PredictiveSplit& p) {
    p = PredictiveSplit{};
    p.n_cells = a.n;
    if (a.n == 0) {
      p.rmse_rate = p.relative_mse = p.coverage = p.mean_width = p.mean_width_rate = kNaN;
      return;
    }
    const double n = static_cast<double>(a.n);
    p.rmse_rate = std::sqrt(a.sq_rate / n);
    p.relative_mse = a.y2 > 0 ? a.sq / a.y2 : (a.sq > 0 ? kNaN : 0.0);
    p.coverage = a.hit / n;
    p.mean_width = a.width / n;
    p.mean_width_rate = a.width_rate / n;
  };
  finish(acc[0], in);
  finish(acc[1], out);
}

std::vector<SummaryRow> summarize(const std::vector<std::string>& names,
                                  const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.empty()) throw ValidationError("no chains to summarize");
  const auto n_draws = chains.front().rows();
  const auto n_par = chains.front().cols();
  for (const auto& c : chains)
    if (c.rows() != n_draws || c.cols() != n_par)
      throw ValidationError("chains have mismatched shapes");
  if (static_cast<Eigen::Index>(names.size()) != n_par)
    throw ValidationError("parameter name count does not match the draw columns");
  const auto m = static_cast<Eigen::Index>(chains.size());
  std::vector<SummaryRow> rows(n_par);
  ChainMatrix x(n_draws, m);
  for (Eigen::Index j = 0; j < n_par; ++j) {
    for (Eigen::Index c = 0; c < m; ++c) x.col(c) = chains[c].col(j);
    SummaryRow& r = rows[j];
    r.parameter = names[j];
    std::span<const double> all(x.data(), static_cast<std::size_t>(x.size()));
    r.mean = x.mean();
    r.sd = x.size() > 1 ? std::sqrt((x.array() - r.mean).square().sum() / double(x.size() - 1)) : 0.0;
    r.q025 = quantile(all, 0.025);
    r.q975 = quantile(all, 0.975);
    if (n_draws >= 4) {
      const auto rh = split_rhat(x);
      r.rhat = rh.value;
      r.degenerate = rh.degenerate;
      r.ess_bulk = ess_bulk(x);
    } else {
      r.rhat = kNaN;
      r.ess_bulk = kNaN;
    }
  }
  return rows;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "parameter,mean,sd,q2.5,q97.5,rhat,ess_bulk\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%.10g,%.6f,%.1f\n", r.mean, r.sd, r.q025,
                  r.q975, r.rhat, r.ess_bulk);
    os << r.parameter << buf;
  }
}

}  // namespace poiar
