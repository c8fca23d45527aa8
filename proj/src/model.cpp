#include "poiar/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "detail.hpp"
#include "poiar/error.hpp"
#include "poiar/simd.hpp"

namespace poiar {

using detail::normal_lpdf;

Variant parse_variant(std::string_view s) {
  if (s.size() == 1 && s[0] >= 'a' && s[0] <= 'e') return static_cast<Variant>(s[0] - 'a');
  throw ValidationError("unknown model variant '" + std::string(s) + "' (expected a..e)");
}

char variant_char(Variant v) { return static_cast<char>('a' + static_cast<int>(v)); }

DepletionMode parse_depletion(std::string_view s) {
  if (s == "susceptible") return DepletionMode::susceptible;
  if (s == "literal") return DepletionMode::literal;
  throw ValidationError("unknown depletion mode '" + std::string(s) +
                        "' (expected susceptible|literal)");
}

std::string_view depletion_name(DepletionMode m) {
  return m == DepletionMode::susceptible ? "susceptible" : "literal";
}

FieldCoordinates parse_field_coordinates(std::string_view s) {
  if (s == "whitened") return FieldCoordinates::whitened;
  if (s == "innovations") return FieldCoordinates::innovations;
  throw ValidationError("unknown field coordinates '" + std::string(s) +
                        "' (expected whitened|innovations)");
}

std::string_view field_coordinates_name(FieldCoordinates f) {
  return f == FieldCoordinates::whitened ? "whitened" : "innovations";
}

void ModelConfig::validate() const {
  if (tau < 1) throw ValidationError("tau must be >= 1");
  if (immunity_window && *immunity_window < 1)
    throw ValidationError("immunity window must be >= 1 week");
  if (!(depletion_floor > 0.0 && depletion_floor < 1.0))
    throw ValidationError("depletion floor must lie in (0, 1)");
  const auto& p = priors;
  for (double s : {p.beta0_sd, p.beta_sd, p.eta_sd, p.sigma_phi_scale, p.sigma_psi_scale,
                   p.dirichlet_concentration})
    if (!(s > 0.0)) throw ValidationError("prior scales must be positive");
  if (sum_to_zero_variance && !(*sum_to_zero_variance > 0.0))
    throw ValidationError("sum-to-zero variance must be positive");
}

// ---------------------------------------------------------------------------
// Data containers

std::int64_t CountPanel::count_at(std::int32_t area, std::int32_t t) const {
  if (t >= 0) return counts(area, t);
  const std::int32_t p = -t - 1;
  if (p >= n_pre())
    throw ValidationError("count for area " + std::to_string(area) + " at week " +
                          std::to_string(t) + " precedes the supplied pre-period");
  return pre_counts(area, p);
}

void CountPanel::validate() const {
  const auto n = n_areas();
  if (n < 1 || n_times() < 1) throw ValidationError("count panel is empty");
  if (pre_counts.rows() != n && pre_counts.cols() > 0)
    throw ValidationError("pre-period counts have the wrong number of areas");
  if (population.size() != n || offset.size() != n)
    throw ValidationError("population/offset length does not match the area count");
  if (in_sample.rows() != n || in_sample.cols() != n_times())
    throw ValidationError("in-sample mask dimensions do not match the counts");
  for (std::int32_t l = 0; l < n; ++l) {
    if (!(population[l] > 0.0))
      throw ValidationError("population of area " + std::to_string(l) + " must be positive");
    if (!(offset[l] > 0.0))
      throw ValidationError("offset of area " + std::to_string(l) + " must be positive");
    for (std::int32_t t = 0; t < n_times(); ++t)
      if (counts(l, t) < 0)
        throw ValidationError("negative count at area " + std::to_string(l) + ", week " +
                              std::to_string(t));
    for (std::int32_t p = 0; p < n_pre(); ++p)
      if (pre_counts(l, p) < 0)
        throw ValidationError("negative pre-period count at area " + std::to_string(l));
  }
}

CountPanel CountPanel::make(CountMatrix counts, CountMatrix pre_counts,
                            Eigen::VectorXd population) {
  CountPanel p;
  p.in_sample = MaskMatrix::Constant(counts.rows(), counts.cols(), true);
  p.counts = std::move(counts);
  p.pre_counts = std::move(pre_counts);
  p.offset = population / 10000.0;
  p.population = std::move(population);
  return p;
}

DesignMatrices DesignMatrices::intercepts_only(std::int32_t n_cells) {
  DesignMatrices d;
  d.x = Eigen::MatrixXd::Ones(n_cells, 1);
  d.v = Eigen::MatrixXd::Ones(n_cells, 1);
  d.x_names = {"intercept"};
  d.v_names = {"intercept"};
  return d;
}

void DesignMatrices::validate(std::int32_t n_cells) const {
  auto check = [n_cells](const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != n_cells || m.cols() < 1)
      throw ValidationError(std::string(what) + " design must have one row per cell and an intercept");
    if (!(m.col(0).array() == 1.0).all())
      throw ValidationError(std::string(what) + " design: first column must be all ones");
    if (!m.allFinite()) throw ValidationError(std::string(what) + " design has non-finite entries");
  };
  check(x, "growth-rate");
  check(v, "baseline");
}

// ---------------------------------------------------------------------------
// Data-only quantities

double depletion(const CountPanel& panel, const ModelConfig& config, std::int32_t area,
                 std::int32_t t) {
  const std::int32_t available = t + panel.n_pre();
  const std::int32_t window =
      config.immunity_window ? std::min(*config.immunity_window, available) : available;
  double cumulative = 0.0;
  for (std::int32_t j = 1; j <= window; ++j)
    cumulative += static_cast<double>(panel.count_at(area, t - j));
  const double share = cumulative / panel.population[area];
  if (config.depletion == DepletionMode::literal) return share;
  return std::clamp(1.0 - share, config.depletion_floor, 1.0);
}

double weighted_lag(const CountPanel& panel, std::span<const double> w, std::int32_t area,
                    std::int32_t t) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    s += w[i] * static_cast<double>(panel.count_at(area, t - static_cast<std::int32_t>(i) - 1));
  return s;
}

Model::Model(AreaGraph graph, CountPanel panel, DesignMatrices designs, ModelConfig config)
    : graph_(std::move(graph)),
      panel_(std::move(panel)),
      designs_(std::move(designs)),
      config_(std::move(config)) {
  config_.validate();
  panel_.validate();
  if (graph_.n_areas() != panel_.n_areas())
    throw ValidationError("graph has " + std::to_string(graph_.n_areas()) +
                          " areas but the panel has " + std::to_string(panel_.n_areas()));
  if (panel_.n_pre() < config_.tau)
    throw ValidationError("tau = " + std::to_string(config_.tau) + " needs " +
                          std::to_string(config_.tau) + " pre-period weeks, only " +
                          std::to_string(panel_.n_pre()) + " supplied");
  const auto n_areas = panel_.n_areas();
  const auto n_times = panel_.n_times();
  const auto n = n_areas * n_times;
  designs_.validate(n);
  const bool whitened = config_.field_coordinates == FieldCoordinates::whitened &&
                        (has_phi(config_.variant) || has_psi(config_.variant));
  spectrum_ = eigen_spectrum(graph_, whitened);
  layout_ = ParameterLayout::make(config_, n_areas, n_times,
                                  static_cast<std::int32_t>(designs_.x.cols()),
                                  static_cast<std::int32_t>(designs_.v.cols()));
  if (whitened) layout_.basis = std::make_shared<const EigenSpectrum>(spectrum_);

  lags_.resize(n, config_.tau);
  depletion_.resize(n);
  log_offset_.resize(n);
  y_.resize(n);
  lgamma_y_.resize(n);
  in_sample_.resize(n);
  for (std::int32_t t = 0; t < n_times; ++t) {
    for (std::int32_t l = 0; l < n_areas; ++l) {
      const auto c = l + n_areas * t;
      for (std::int32_t i = 0; i < config_.tau; ++i)
        lags_(c, i) = static_cast<double>(panel_.count_at(l, t - i - 1));
      depletion_[c] = depletion(panel_, config_, l, t);
      log_offset_[c] = std::log(panel_.offset[l]);
      y_[c] = static_cast<double>(panel_.counts(l, t));
      lgamma_y_[c] = std::lgamma(y_[c] + 1.0);
      in_sample_[c] = panel_.in_sample(l, t) ? 1 : 0;
    }
  }
  sum_to_zero_var_ = config_.sum_to_zero_variance.value_or(0.001 * double(n) * double(n));
}

// ---------------------------------------------------------------------------
// Rates and likelihood

RateComponents rate_components(const Model& model, const ParameterSet& params) {
  const auto n_areas = model.n_areas();
  const auto n_times = model.n_times();
  const auto n = model.n_cells();
  const auto& v = model.config().variant;
  RateComponents rc;
  rc.phi = has_phi(v) ? noncentered(params.phi_star, params.theta_phi)
                      : StField::Zero(n_areas, n_times);
  rc.psi = has_psi(v) ? noncentered(params.psi_star, params.theta_psi)
                      : StField::Zero(n_areas, n_times);
  const auto& d = model.designs();
  const Eigen::VectorXd lin_r = d.x.leftCols(params.beta.size()) * params.beta +
                                Eigen::Map<const Eigen::VectorXd>(rc.phi.data(), n);
  const Eigen::VectorXd lin_b = d.v.leftCols(params.eta.size()) * params.eta +
                                Eigen::Map<const Eigen::VectorXd>(rc.psi.data(), n) +
                                model.log_offset();
  const Eigen::VectorXd wl = model.lags() * params.w;
  rc.growth_rate = lin_r.array().exp();
  rc.epidemic = wl.array() * rc.growth_rate.array();
  rc.endemic = lin_b.array().exp();
  rc.lambda = (rc.epidemic + rc.endemic).array() * model.depletion_factors().array();
  return rc;
}

double rate(const Model& model, const ParameterSet& params, std::int32_t area, std::int32_t t) {
  if (area < 0 || area >= model.n_areas() || t < 0 || t >= model.n_times())
    throw ValidationError("cell (" + std::to_string(area) + "," + std::to_string(t) +
                          ") is outside the panel");
  const auto& v = model.config().variant;
  const double phi = has_phi(v) ? noncentered(params.phi_star, params.theta_phi)(area, t) : 0.0;
  const double psi = has_psi(v) ? noncentered(params.psi_star, params.theta_psi)(area, t) : 0.0;
  const auto c = area + model.n_areas() * t;
  const auto& d = model.designs();
  const double r = std::exp(d.x.row(c).head(params.beta.size()).dot(params.beta) + phi);
  const double b = model.panel().offset[area] *
                   std::exp(d.v.row(c).head(params.eta.size()).dot(params.eta) + psi);
  const double wl = weighted_lag(model.panel(), {params.w.data(), std::size_t(params.w.size())},
                                 area, t);
  return (wl * r + b) * depletion(model.panel(), model.config(), area, t);
}

namespace {

double poisson_lpmf(double y, double lambda, double lgamma_y1) {
  if (y == 0.0) return -lambda;
  if (!(lambda > 0.0)) return -std::numeric_limits<double>::infinity();
  return y * std::log(lambda) - lambda - lgamma_y1;
}

bool selected(CellSelection s, bool in) {
  return s == CellSelection::all || (s == CellSelection::in_sample) == in;
}

}  // namespace

LogLikelihood log_likelihood(const Model& model, const ParameterSet& params,
                             CellSelection selection) {
  const auto rc = rate_components(model, params);
  const auto n_areas = model.n_areas();
  LogLikelihood out;
  out.pointwise = Eigen::MatrixXd::Constant(n_areas, model.n_times(),
                                            std::numeric_limits<double>::quiet_NaN());
  for (std::int32_t c = 0; c < model.n_cells(); ++c) {
    if (!selected(selection, model.in_sample()[c])) continue;
    const double ll = poisson_lpmf(model.y()[c], rc.lambda[c], model.log_y_factorial()[c]);
    out.pointwise(c % n_areas, c / n_areas) = ll;
    out.total += ll;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Priors

double log_prior(const Model& model, const ParameterSet& params) {
  const auto& cfg = model.config();
  const auto& pr = cfg.priors;
  double lp = normal_lpdf(params.beta[0], pr.beta0_mean, pr.beta0_sd);
  for (Eigen::Index j = 1; j < params.beta.size(); ++j)
    lp += normal_lpdf(params.beta[j], pr.beta_mean, pr.beta_sd);
  for (Eigen::Index j = 0; j < params.eta.size(); ++j)
    lp += normal_lpdf(params.eta[j], pr.eta_mean, pr.eta_sd);

  const double conc = pr.dirichlet_concentration;
  const double tau = static_cast<double>(params.w.size());
  lp += std::lgamma(tau * conc) - tau * std::lgamma(conc);
  if (conc != 1.0) lp += (conc - 1.0) * params.w.array().log().sum();

  auto field_prior = [&](const CarParams& theta, const StField& star, double scale) {
    // α, ρ ~ U(0, 1) contribute nothing; σ ~ N⁺(0, scale).
    double f = std::numbers::ln2 + normal_lpdf(theta.sigma, 0.0, scale);
    for (Eigen::Index t = 0; t < star.cols(); ++t)
      f += leroux_logpdf(model.graph(), model.spectrum(),
                         {star.col(t).data(), std::size_t(star.rows())}, theta.alpha, 1.0);
    const double total = noncentered(star, theta).sum();
    f += normal_lpdf(total, 0.0, std::sqrt(model.sum_to_zero_variance()));
    return f;
  };
  if (has_phi(cfg.variant))
    lp += field_prior(params.theta_phi, params.phi_star, pr.sigma_phi_scale);
  if (has_psi(cfg.variant))
    lp += field_prior(params.theta_psi, params.psi_star, pr.sigma_psi_scale);
  return lp;
}

// ---------------------------------------------------------------------------
// Log posterior and gradient

PosteriorEvaluator::PosteriorEvaluator(const Model& model) : model_(&model) {
  const auto n = model.n_cells();
  phi_.setZero(n);
  psi_.setZero(n);
  lin_r_.resize(n);
  lin_b_.resize(n);
  gphi_.resize(n);
  gpsi_.resize(n);
  tmp_.resize(model.n_areas());
}

double PosteriorEvaluator::operator()(std::span<const double> z, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  double lp;
  try {
    lp = evaluate(z, grad.data());
  } catch (const NumericError&) {
    lp = -std::numeric_limits<double>::infinity();
  }
  if (!std::isfinite(lp)) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return -std::numeric_limits<double>::infinity();
  }
  for (double g : grad)
    if (!std::isfinite(g)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return -std::numeric_limits<double>::infinity();
    }
  return lp;
}

double PosteriorEvaluator::log_density(std::span<const double> z) {
  double lp;
  try {
    lp = evaluate(z, nullptr);
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
  return std::isfinite(lp) ? lp : -std::numeric_limits<double>::infinity();
}

namespace {

double logistic(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

double log_logistic_jacobian(double u) {
  const double a = std::abs(u);
  return -a - 2.0 * std::log1p(std::exp(-a));
}

}  // namespace

double PosteriorEvaluator::evaluate(std::span<const double> z, double* grad) {
  const Model& m = *model_;
  const auto& lay = m.layout();
  const auto& cfg = m.config();
  const auto& pr = cfg.priors;
  const auto& ker = simd::active();
  const auto n_areas = m.n_areas();
  const auto n_times = m.n_times();
  const auto n = m.n_cells();
  const bool want_grad = grad != nullptr;
  if (z.size() != lay.dim)
    throw ValidationError("unconstrained vector has length " + std::to_string(z.size()) +
                          ", layout expects " + std::to_string(lay.dim));

  const Eigen::Map<const Eigen::VectorXd> beta(z.data() + lay.beta.offset, lay.beta.size);
  const Eigen::Map<const Eigen::VectorXd> eta(z.data() + lay.eta.offset, lay.eta.size);
  const auto w_raw = z.subspan(lay.w_raw.offset, lay.w_raw.size);
  const auto [w, log_jac_w] = simplex_transform(w_raw);
  double lp = log_jac_w;

  struct FieldState {
    bool active = false;
    double alpha = 0, rho = 0, sigma = 0;
  };
  auto unpack = [&](const Slice& a, const Slice& r, const Slice& s, const Slice& star,
                    Eigen::VectorXd& field, Eigen::MatrixXd& star_buf, Eigen::VectorXd& scale) {
    FieldState st;
    if (!star.size) return st;
    st.active = true;
    st.alpha = logistic(z[a.offset]);
    st.rho = logistic(z[r.offset]);
    st.sigma = std::exp(z[s.offset]);
    lp += log_logistic_jacobian(z[a.offset]) + log_logistic_jacobian(z[r.offset]) + z[s.offset];
    const double* zs = z.data() + star.offset;
    if (lay.basis) {
      // φ*_t = U diag(scale) ε_t
      scale = detail::whitening_scales(*lay.basis, st.alpha);
      const Eigen::Map<const Eigen::MatrixXd> eps(zs, n_areas, n_times);
      star_buf.noalias() = lay.basis->vectors * (scale.asDiagonal() * eps);
      zs = star_buf.data();
    }
    double* f = field.data();
    for (std::int32_t i = 0; i < n_areas; ++i) f[i] = st.sigma * zs[i];
    for (std::int32_t t = 1; t < n_times; ++t) {
      const auto o = static_cast<std::size_t>(t) * n_areas;
      for (std::int32_t i = 0; i < n_areas; ++i)
        f[o + i] = st.rho * f[o - n_areas + i] + st.sigma * zs[o + i];
    }
    return st;
  };
  const FieldState fphi =
      unpack(lay.alpha_phi, lay.rho_phi, lay.sigma_phi, lay.phi_star, phi_, star_phi_, scale_phi_);
  const FieldState fpsi =
      unpack(lay.alpha_psi, lay.rho_psi, lay.sigma_psi, lay.psi_star, psi_, star_psi_, scale_psi_);

  // Linear predictors.
  const auto& des = m.designs();
  lin_r_.noalias() = des.x.leftCols(lay.beta.size) * beta;
  if (fphi.active) lin_r_ += phi_;
  lin_b_.noalias() = des.v.leftCols(lay.eta.size) * eta;
  lin_b_ += m.log_offset();
  if (fpsi.active) lin_b_ += psi_;

  // Likelihood over in-sample cells. gphi_/gpsi_ receive ∂ll/∂(log r̃) and ∂ll/∂(log b).
  const auto& lags = m.lags();
  const auto tau = static_cast<std::int32_t>(w.size());
  const double* dep = m.depletion_factors().data();
  const double* yv = m.y().data();
  const double* lgy = m.log_y_factorial().data();
  const auto& in = m.in_sample();
  Eigen::VectorXd grad_w = Eigen::VectorXd::Zero(tau);
  double ll = 0.0;
  for (std::int32_t c = 0; c < n; ++c) {
    if (!in[c]) {
      gphi_[c] = 0.0;
      gpsi_[c] = 0.0;
      continue;
    }
    double wl = 0.0;
    for (std::int32_t i = 0; i < tau; ++i) wl += w[i] * lags(c, i);
    const double rt = std::exp(lin_r_[c]);
    const double epi = wl * rt * dep[c];
    const double endo = std::exp(lin_b_[c]) * dep[c];
    const double lam = epi + endo;
    const double y = yv[c];
    double g;
    if (y == 0.0) {
      ll -= lam;
      g = -1.0;
    } else {
      if (!(lam > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += y * std::log(lam) - lam - lgy[c];
      g = y / lam - 1.0;
    }
    gphi_[c] = g * epi;
    gpsi_[c] = g * endo;
    if (want_grad)
      for (std::int32_t i = 0; i < tau; ++i) grad_w[i] += g * lags(c, i) * rt * dep[c];
  }
  if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
  lp += ll;

  // Coefficient priors.
  lp += normal_lpdf(beta[0], pr.beta0_mean, pr.beta0_sd);
  for (Eigen::Index j = 1; j < beta.size(); ++j) lp += normal_lpdf(beta[j], pr.beta_mean, pr.beta_sd);
  for (Eigen::Index j = 0; j < eta.size(); ++j) lp += normal_lpdf(eta[j], pr.eta_mean, pr.eta_sd);
  if (want_grad) {
    Eigen::Map<Eigen::VectorXd> gb(grad + lay.beta.offset, lay.beta.size);
    Eigen::Map<Eigen::VectorXd> ge(grad + lay.eta.offset, lay.eta.size);
    gb.noalias() = des.x.leftCols(lay.beta.size).transpose() * gphi_;
    ge.noalias() = des.v.leftCols(lay.eta.size).transpose() * gpsi_;
    gb[0] -= (beta[0] - pr.beta0_mean) / (pr.beta0_sd * pr.beta0_sd);
    for (Eigen::Index j = 1; j < beta.size(); ++j)
      gb[j] -= (beta[j] - pr.beta_mean) / (pr.beta_sd * pr.beta_sd);
    for (Eigen::Index j = 0; j < eta.size(); ++j)
      ge[j] -= (eta[j] - pr.eta_mean) / (pr.eta_sd * pr.eta_sd);
  }

  // Dirichlet prior on w.
  const double conc = pr.dirichlet_concentration;
  lp += std::lgamma(tau * conc) - tau * std::lgamma(conc);
  if (conc != 1.0) {
    for (std::int32_t i = 0; i < tau; ++i) {
      lp += (conc - 1.0) * std::log(w[i]);
      grad_w[i] += (conc - 1.0) / w[i];
    }
  }
  if (want_grad)
    detail::simplex_gradient(w_raw, {grad_w.data(), std::size_t(tau)},
                             {grad + lay.w_raw.offset, lay.w_raw.size});

  // Space-time effects: CAR prior on the standardized innovations, half-normal σ,
  // soft sum-to-zero on the transformed field, then backprop through φ_t = ρφ_{t−1} + σφ*_t.
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const double stz_var = m.sum_to_zero_variance();
  const auto& graph = m.graph();
  auto field_block = [&](const FieldState& st, const Slice& a, const Slice& r, const Slice& s,
                         const Slice& star, double scale, const Eigen::VectorXd& field,
                         Eigen::VectorXd& g, const Eigen::MatrixXd& star_buf,
                         const Eigen::VectorXd& wscale) {
    if (!st.active) return;
    lp += std::numbers::ln2 + normal_lpdf(st.sigma, 0.0, scale);
    double d_sigma = -st.sigma / (scale * scale);
    const bool white = lay.basis != nullptr;
    double d_alpha = 0.0;
    const double* zs = white ? star_buf.data() : z.data() + star.offset;
    if (white) {
      // ε ~ N(0, I); the log-determinant cancels against the Jacobian of ε → φ*.
      const double* e = z.data() + star.offset;
      lp += -0.5 * n * log_2pi - 0.5 * ker.sum_sq(e, n);
      if (want_grad) ker.axpy(-1.0, e, grad + star.offset, n);
    } else {
      lp += n_times * (-0.5 * n_areas * log_2pi + 0.5 * log_det_q(m.spectrum(), st.alpha));
      if (want_grad) d_alpha = 0.5 * n_times * log_det_q_derivative(m.spectrum(), st.alpha);
      for (std::int32_t t = 0; t < n_times; ++t) {
        const double* x = zs + static_cast<std::size_t>(t) * n_areas;
        const double edges =
            ker.edge_sq_diff(x, graph.edge_from().data(), graph.edge_to().data(), graph.n_edges());
        const double ss = ker.sum_sq(x, n_areas);
        lp -= 0.5 * (st.alpha * edges + (1.0 - st.alpha) * ss);
        if (want_grad) {
          d_alpha -= 0.5 * (edges - ss);
          precision_multiply(graph, st.alpha, {x, std::size_t(n_areas)},
                             {tmp_.data(), std::size_t(tmp_.size())});
          ker.axpy(-1.0, tmp_.data(),
                   grad + star.offset + static_cast<std::size_t>(t) * n_areas, n_areas);
        }
      }
    }
    const double total = ker.sum(field.data(), n);
    lp += -0.5 * std::log(2.0 * std::numbers::pi * stz_var) - total * total / (2.0 * stz_var);
    if (!want_grad) return;

    g.array() -= total / stz_var;
    // Adjoint recursion, in place: A_t = G_t + ρ A_{t+1}.
    for (std::int32_t t = n_times - 2; t >= 0; --t)
      ker.axpy(st.rho, g.data() + static_cast<std::size_t>(t + 1) * n_areas,
               g.data() + static_cast<std::size_t>(t) * n_areas, n_areas);
    double d_rho = 0.0;
    d_sigma += ker.dot(g.data(), zs, n);
    if (!white) {
      ker.axpy(st.sigma, g.data(), grad + star.offset, n);
    } else {
      // ∂/∂ε = σ diag(scale) Uᵀ A;  ∂scale_k/∂α = ½ λ_k scale_k³.
      const Eigen::Map<const Eigen::MatrixXd> adj(g.data(), n_areas, n_times);
      const Eigen::Map<const Eigen::MatrixXd> eps(z.data() + star.offset, n_areas, n_times);
      gproj_.noalias() = lay.basis->vectors.transpose() * adj;
      const Eigen::VectorXd& lam = lay.basis->lambdas;
      for (std::int32_t k = 0; k < n_areas; ++k) {
        const double sk = wscale[k];
        d_alpha += st.sigma * 0.5 * lam[k] * sk * sk * sk * gproj_.row(k).dot(eps.row(k));
      }
      Eigen::Map<Eigen::MatrixXd> ge(grad + star.offset, n_areas, n_times);
      ge.noalias() += st.sigma * (wscale.asDiagonal() * gproj_);
    }
    if (n_times > 1)
      d_rho += ker.dot(g.data() + n_areas, field.data(),
                       static_cast<std::size_t>(n_times - 1) * n_areas);
    grad[a.offset] = d_alpha * st.alpha * (1.0 - st.alpha) + (1.0 - 2.0 * st.alpha);
    grad[r.offset] = d_rho * st.rho * (1.0 - st.rho) + (1.0 - 2.0 * st.rho);
    grad[s.offset] = d_sigma * st.sigma + 1.0;
  };
  field_block(fphi, lay.alpha_phi, lay.rho_phi, lay.sigma_phi, lay.phi_star, pr.sigma_phi_scale,
              phi_, gphi_, star_phi_, scale_phi_);
  field_block(fpsi, lay.alpha_psi, lay.rho_psi, lay.sigma_psi, lay.psi_star, pr.sigma_psi_scale,
              psi_, gpsi_, star_psi_, scale_psi_);
  return lp;
}

void PosteriorEvaluator::pointwise_log_likelihood(std::span<const double> z,
                                                  std::span<double> out) {
  const auto [params, jac] = transform(model_->layout(), z);
  const auto rc = rate_components(*model_, params);
  const auto& m = *model_;
  for (std::int32_t c = 0; c < m.n_cells(); ++c)
    out[c] = poisson_lpmf(m.y()[c], rc.lambda[c], m.log_y_factorial()[c]);
}

std::pair<double, Eigen::VectorXd> log_posterior_grad(const Model& model,
                                                      std::span<const double> z) {
  PosteriorEvaluator eval(model);
  Eigen::VectorXd grad(model.layout().dim);
  const double lp = eval(z, {grad.data(), std::size_t(grad.size())});
  return {lp, std::move(grad)};
}

Eigen::MatrixXd epidemic_proportion(const Model& model, const ParameterSet& params) {
  const auto rc = rate_components(model, params);
  Eigen::VectorXd p = rc.epidemic.array() / (rc.epidemic + rc.endemic).array();
  return Eigen::Map<const Eigen::MatrixXd>(p.data(), model.n_areas(), model.n_times());
}

// ---------------------------------------------------------------------------
// Covariate standardization

void standardize_column(Eigen::Ref<Eigen::VectorXd> column, std::int32_t n_areas, bool per_area,
                        const std::string& name) {
  const auto n = column.size();
  if (n_areas < 1 || n % n_areas != 0)
    throw ValidationError("column '" + name + "' length is not a multiple of the area count");
  auto scale_group = [&](auto&& indices, std::int64_t count, const std::string& where) {
    if (count < 2) throw ValidationError("column '" + name + "' needs >= 2 values" + where);
    double mean = 0.0;
    for (auto c : indices) mean += column[c];
    mean /= count;
    double ss = 0.0;
    for (auto c : indices) ss += (column[c] - mean) * (column[c] - mean);
    const double sd = std::sqrt(ss / (count - 1));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
      throw ValidationError("column '" + name + "' has zero variance" + where);
    for (auto c : indices) column[c] = (column[c] - mean) / sd;
  };
  const auto n_times = n / n_areas;
  if (per_area) {
    std::vector<Eigen::Index> idx(n_times);
    for (std::int32_t l = 0; l < n_areas; ++l) {
      for (Eigen::Index t = 0; t < n_times; ++t) idx[t] = l + n_areas * t;
      scale_group(idx, n_times, " within area " + std::to_string(l));
    }
  } else {
    std::vector<Eigen::Index> idx(n);
    for (Eigen::Index c = 0; c < n; ++c) idx[c] = c;
    scale_group(idx, n, "");
  }
}

Eigen::MatrixXd standardize_covariates(const Eigen::MatrixXd& raw, std::int32_t n_areas,
                                       bool per_area, std::span<const std::string> names) {
  Eigen::MatrixXd out = raw;
  for (Eigen::Index j = 1; j < raw.cols(); ++j) {
    const std::string name =
        j < static_cast<Eigen::Index>(names.size()) ? names[j] : "column " + std::to_string(j);
    standardize_column(out.col(j), n_areas, per_area, name);
  }
  return out;
}

}  // namespace poiar
