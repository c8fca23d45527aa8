// Pareto-smoothed importance sampling leave-one-out.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "poiar/diagnostics.hpp"
#include "poiar/error.hpp"
#include "poiar/log.hpp"

namespace poiar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMinParetoDraws = 50;

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Inverse CDF of the generalized Pareto with location 0.
double gpd_quantile(double p, double k, double sigma) {
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

}  // namespace

ParetoFit fit_generalized_pareto(std::span<const double> x) {
  const auto n = x.size();
  if (n < 2) throw ValidationError("generalized Pareto fit needs at least 2 exceedances");
  constexpr double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  const double x_star = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  const double x_max = x[n - 1];
  const double nd = static_cast<double>(n);

  std::vector<double> theta(m), l_theta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x_max + (1.0 - std::sqrt(double(m) / (double(j) + 0.5))) / prior / x_star;
    // Profile log-likelihood.
    const double a = -theta[j];
    double k = 0.0;
    for (double v : x) k += std::log1p(a * v);
    k /= nd;
    l_theta[j] = nd * (std::log(a / k) - k - 1.0);
  }
  const double lse = log_sum_exp(l_theta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double w = std::exp(l_theta[j] - lse);
    if (std::isfinite(w)) theta_hat += theta[j] * w;
  }
  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= nd;
  const double sigma = -k / theta_hat;
  // Shrink towards 0.5 with a prior worth 10 observations.
  k = k * nd / (nd + 10.0) + 10.0 * 0.5 / (nd + 10.0);
  if (std::isnan(k)) k = kInf;
  return {k, sigma};
}

SmoothedWeights psis_smooth(std::span<const double> log_ratios) {
  const auto s = log_ratios.size();
  if (s < 1) throw ValidationError("psis needs at least one draw");
  SmoothedWeights out;
  out.log_weights = Eigen::Map<const Eigen::VectorXd>(log_ratios.data(), s);
  const double max_lr = out.log_weights.maxCoeff();
  out.log_weights.array() -= max_lr;
  auto normalize = [&out] {
    out.log_weights.array() -=
        log_sum_exp({out.log_weights.data(), std::size_t(out.log_weights.size())});
  };

  if ((out.log_weights.array() == out.log_weights[0]).all()) {
    out.degenerate = true;
    out.k = 0.0;
    normalize();
    return out;
  }
  if (s < kMinParetoDraws) {
    out.smoothed = false;
    out.k = std::numeric_limits<double>::quiet_NaN();
    normalize();
    return out;
  }

  const std::size_t tail_len = static_cast<std::size_t>(
      std::ceil(std::min(0.2 * double(s), 3.0 * std::sqrt(double(s)))));
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double* lw = out.log_weights.data();
  std::stable_sort(order.begin(), order.end(), [lw](auto a, auto b) { return lw[a] < lw[b]; });
  const std::size_t first_tail = s - tail_len;
  const double cutoff = lw[order[first_tail - 1]];
  const double tail_min = lw[order[first_tail]];
  const double tail_max = lw[order[s - 1]];
  if (std::abs(tail_max - tail_min) < std::numeric_limits<double>::epsilon() / 100.0) {
    out.k = kInf;
    normalize();
    return out;
  }

  const double exp_cutoff = std::exp(cutoff);
  std::vector<double> exceed(tail_len);
  for (std::size_t i = 0; i < tail_len; ++i) exceed[i] = std::exp(lw[order[first_tail + i]]) - exp_cutoff;
  const auto fit = fit_generalized_pareto(exceed);
  out.k = fit.k;
  if (std::isfinite(fit.k)) {
    for (std::size_t i = 0; i < tail_len; ++i) {
      const double p = (double(i) + 0.5) / double(tail_len);
      const double smoothed = std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff);
      // Truncate at the largest raw ratio (0 after the shift).
      out.log_weights[order[first_tail + i]] = std::min(smoothed, 0.0);
    }
  }
  normalize();
  return out;
}

LooResult psis_loo(const Eigen::MatrixXd& loglik) {
  const auto s = loglik.rows();
  const auto n = loglik.cols();
  if (s < 1 || n < 1) throw ValidationError("psis_loo needs a non-empty log-likelihood matrix");
  LooResult r;
  r.pointwise.resize(n);
  r.pareto_k.resize(n);
  r.degenerate.assign(n, 0);
  r.raw_importance_sampling = static_cast<std::size_t>(s) < kMinParetoDraws;
  if (r.raw_importance_sampling)
    warn("psis_loo: only " + std::to_string(s) +
         " draws; using raw importance sampling without Pareto smoothing");
  std::vector<double> lr(s), col(s);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < s; ++k) {
      col[k] = loglik(k, i);
      lr[k] = -col[k];
    }
    const auto sw = psis_smooth(lr);
    for (Eigen::Index k = 0; k < s; ++k) lr[k] = sw.log_weights[k] + col[k];
    r.pointwise[i] = log_sum_exp(lr);
    r.pareto_k[i] = sw.k;
    r.degenerate[i] = sw.degenerate ? 1 : 0;
    if (sw.k > 0.7) ++r.n_high_k;
    r.lppd += log_mean_exp(col);
  }
  r.elpd_loo = r.pointwise.sum();
  r.p_loo = r.lppd - r.elpd_loo;
  if (n > 1) {
    const double mean = r.pointwise.mean();
    r.se = std::sqrt(double(n) * (r.pointwise.array() - mean).square().sum() / double(n - 1));
  }
  return r;
}

}  // namespace poiar
