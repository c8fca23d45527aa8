#include <cmath>
#include <string>
#include <vector>

#include "detail.hpp"
#include "poiar/error.hpp"
#include "poiar/model.hpp"

namespace poiar {

namespace {

double logistic(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(σ(u)(1 − σ(u))), stable for large |u|.
double log_logistic_jacobian(double u) {
  const double a = std::abs(u);
  return -a - 2.0 * std::log1p(std::exp(-a));
}

}  // namespace

ParameterLayout ParameterLayout::make(const ModelConfig& config, std::int32_t n_areas,
                                      std::int32_t n_times, std::int32_t n_x, std::int32_t n_v) {
  if (n_x < 1 || n_v < 1) throw ValidationError("design matrices need an intercept column");
  ParameterLayout l;
  l.variant = config.variant;
  l.n_areas = n_areas;
  l.n_times = n_times;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    Slice s{at, n};
    at += n;
    return s;
  };
  const bool cov = has_covariates(config.variant);
  l.beta = take(cov ? n_x : 1);
  l.eta = take(cov ? n_v : 1);
  l.w_raw = take(static_cast<std::size_t>(config.tau - 1));
  const std::size_t n_cells = static_cast<std::size_t>(n_areas) * n_times;
  if (has_phi(config.variant)) {
    l.alpha_phi = take(1);
    l.rho_phi = take(1);
    l.sigma_phi = take(1);
    l.phi_star = take(n_cells);
  }
  if (has_psi(config.variant)) {
    l.alpha_psi = take(1);
    l.rho_psi = take(1);
    l.sigma_psi = take(1);
    l.psi_star = take(n_cells);
  }
  l.dim = at;
  return l;
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out(dim);
  auto fill = [&out](const Slice& s, const std::string& stem) {
    for (std::size_t k = 0; k < s.size; ++k) out[s.offset + k] = stem + "[" + std::to_string(k) + "]";
  };
  auto fill_field = [&](const Slice& s, const std::string& stem) {
    for (std::size_t k = 0; k < s.size; ++k)
      out[s.offset + k] = stem + "[" + std::to_string(k % n_areas) + ":" +
                          std::to_string(k / n_areas) + "]";
  };
  fill(beta, "beta");
  fill(eta, "eta");
  fill(w_raw, "w_raw");
  // Whitened slots are indexed by eigenvector rather than area.
  const std::string star = basis ? "_eps" : "_star";
  if (phi_star.size) {
    out[alpha_phi.offset] = "logit_alpha_phi";
    out[rho_phi.offset] = "logit_rho_phi";
    out[sigma_phi.offset] = "log_sigma_phi";
    fill_field(phi_star, "phi" + star);
  }
  if (psi_star.size) {
    out[alpha_psi.offset] = "logit_alpha_psi";
    out[rho_psi.offset] = "logit_rho_psi";
    out[sigma_psi.offset] = "log_sigma_psi";
    fill_field(psi_star, "psi" + star);
  }
  return out;
}

std::pair<Eigen::VectorXd, double> simplex_transform(std::span<const double> y) {
  const std::size_t k_minus_1 = y.size();
  Eigen::VectorXd w(k_minus_1 + 1);
  double stick = 1.0;
  double log_jac = 0.0;
  for (std::size_t k = 0; k < k_minus_1; ++k) {
    const double adj = y[k] - std::log(static_cast<double>(k_minus_1 - k));
    const double z = logistic(adj);
    w[k] = stick * z;
    log_jac += std::log(stick) + log_logistic_jacobian(adj);
    stick -= w[k];
  }
  w[k_minus_1] = stick;
  return {w, log_jac};
}

Eigen::VectorXd simplex_untransform(std::span<const double> w) {
  if (w.empty()) throw ValidationError("simplex must have at least one component");
  const std::size_t k_minus_1 = w.size() - 1;
  Eigen::VectorXd y(k_minus_1);
  double stick = 1.0;
  for (std::size_t k = 0; k < k_minus_1; ++k) {
    y[k] = logit(w[k] / stick) + std::log(static_cast<double>(k_minus_1 - k));
    stick -= w[k];
  }
  return y;
}

namespace detail {

Eigen::VectorXd whitening_scales(const EigenSpectrum& spectrum, double alpha) {
  Eigen::VectorXd s(spectrum.lambdas.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    const double q = 1.0 - alpha * spectrum.lambdas[k];
    if (!(q > 0.0)) throw NumericError("Q(alpha) is not positive definite");
    s[k] = 1.0 / std::sqrt(q);
  }
  return s;
}

void simplex_gradient(std::span<const double> y, std::span<const double> grad_w,
                      std::span<double> grad_y) {
  const std::size_t km1 = y.size();
  if (km1 == 0) return;
  std::vector<double> stick(km1 + 1), z(km1);
  stick[0] = 1.0;
  for (std::size_t k = 0; k < km1; ++k) {
    z[k] = logistic(y[k] - std::log(static_cast<double>(km1 - k)));
    stick[k + 1] = stick[k] * (1.0 - z[k]);
  }
  // Reverse sweep; s_bar is the adjoint of the stick length entering step k.
  double s_bar = grad_w[km1];
  for (std::size_t k = km1; k-- > 0;) {
    const double s = stick[k];
    double z_bar = -s_bar * s + grad_w[k] * s;
    double s_acc = s_bar * (1.0 - z[k]) + grad_w[k] * z[k] + 1.0 / s;
    grad_y[k] += z_bar * z[k] * (1.0 - z[k]) + (1.0 - 2.0 * z[k]);
    s_bar = s_acc;
  }
}

}  // namespace detail

std::pair<ParameterSet, double> transform(const ParameterLayout& layout,
                                          std::span<const double> z) {
  if (z.size() != layout.dim)
    throw ValidationError("unconstrained vector has length " + std::to_string(z.size()) +
                          ", layout expects " + std::to_string(layout.dim));
  ParameterSet p;
  double log_jac = 0.0;
  p.beta = Eigen::Map<const Eigen::VectorXd>(z.data() + layout.beta.offset, layout.beta.size);
  p.eta = Eigen::Map<const Eigen::VectorXd>(z.data() + layout.eta.offset, layout.eta.size);
  auto [w, jw] = simplex_transform(z.subspan(layout.w_raw.offset, layout.w_raw.size));
  p.w = std::move(w);
  log_jac += jw;

  auto unpack = [&](const Slice& a, const Slice& r, const Slice& s, const Slice& field,
                    CarParams& theta, StField& star) {
    if (!field.size) return;
    const double ua = z[a.offset], ur = z[r.offset], us = z[s.offset];
    theta.alpha = logistic(ua);
    theta.rho = logistic(ur);
    theta.sigma = std::exp(us);
    log_jac += log_logistic_jacobian(ua) + log_logistic_jacobian(ur) + us;
    const Eigen::Map<const Eigen::MatrixXd> zf(z.data() + field.offset, layout.n_areas,
                                               layout.n_times);
    if (!layout.basis) {
      star = zf;
      return;
    }
    const Eigen::VectorXd sc = detail::whitening_scales(*layout.basis, theta.alpha);
    star.noalias() = layout.basis->vectors * (sc.asDiagonal() * zf);
    log_jac += double(layout.n_times) * sc.array().log().sum();
  };
  unpack(layout.alpha_phi, layout.rho_phi, layout.sigma_phi, layout.phi_star, p.theta_phi,
         p.phi_star);
  unpack(layout.alpha_psi, layout.rho_psi, layout.sigma_psi, layout.psi_star, p.theta_psi,
         p.psi_star);
  return {std::move(p), log_jac};
}

Eigen::VectorXd untransform(const ParameterLayout& layout, const ParameterSet& p) {
  Eigen::VectorXd z(layout.dim);
  auto put = [&z](const Slice& s, const Eigen::VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != s.size)
      throw ValidationError("parameter block size does not match the layout");
    z.segment(s.offset, s.size) = v;
  };
  put(layout.beta, p.beta);
  put(layout.eta, p.eta);
  if (static_cast<std::size_t>(p.w.size()) != layout.w_raw.size + 1)
    throw ValidationError("weight simplex size does not match tau");
  put(layout.w_raw, simplex_untransform({p.w.data(), std::size_t(p.w.size())}));
  auto pack = [&](const Slice& a, const Slice& r, const Slice& s, const Slice& field,
                  const CarParams& theta, const StField& star) {
    if (!field.size) return;
    z[a.offset] = logit(theta.alpha);
    z[r.offset] = logit(theta.rho);
    z[s.offset] = std::log(theta.sigma);
    if (static_cast<std::size_t>(star.size()) != field.size)
      throw ValidationError("random-effect field size does not match the layout");
    Eigen::Map<Eigen::MatrixXd> zf(z.data() + field.offset, layout.n_areas, layout.n_times);
    if (!layout.basis) {
      zf = star;
      return;
    }
    const Eigen::VectorXd sc = detail::whitening_scales(*layout.basis, theta.alpha);
    zf.noalias() = sc.cwiseInverse().asDiagonal() * (layout.basis->vectors.transpose() * star);
  };
  pack(layout.alpha_phi, layout.rho_phi, layout.sigma_phi, layout.phi_star, p.theta_phi,
       p.phi_star);
  pack(layout.alpha_psi, layout.rho_psi, layout.sigma_psi, layout.psi_star, p.theta_psi,
       p.psi_star);
  return z;
}

}  // namespace poiar
