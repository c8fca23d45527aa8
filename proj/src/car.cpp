#include "poiar/car.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "poiar/error.hpp"
#include "poiar/rng.hpp"
#include "poiar/simd.hpp"

namespace poiar {

namespace {

void check_length(const AreaGraph& graph, std::size_t n, const char* what) {
  if (n != static_cast<std::size_t>(graph.n_areas()))
    throw ValidationError(std::string(what) + ": vector length " + std::to_string(n) +
                          " does not match area count " + std::to_string(graph.n_areas()));
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must lie in [0, 1], got " + std::to_string(alpha));
}

void check_field(const AreaGraph& graph, const StField& field) {
  if (field.rows() != graph.n_areas() || field.cols() < 1)
    throw ValidationError("field has shape " + std::to_string(field.rows()) + "x" +
                          std::to_string(field.cols()) + ", expected " +
                          std::to_string(graph.n_areas()) + "xT with T >= 1");
}

}  // namespace

double quad_form(const AreaGraph& graph, double alpha, std::span<const double> x) {
  check_length(graph, x.size(), "quad_form");
  check_alpha(alpha);
  const auto& k = simd::active();
  const double smooth = k.edge_sq_diff(x.data(), graph.edge_from().data(),
                                       graph.edge_to().data(), graph.n_edges());
  return alpha * smooth + (1.0 - alpha) * k.sum_sq(x.data(), x.size());
}

void precision_multiply(const AreaGraph& graph, double alpha, std::span<const double> x,
                        std::span<double> out) {
  check_length(graph, x.size(), "precision_multiply");
  check_length(graph, out.size(), "precision_multiply");
  for (std::int32_t i = 0; i < graph.n_areas(); ++i) {
    double nb = 0.0;
    for (auto j : graph.neighbors(i)) nb += x[j];
    out[i] = alpha * (graph.degree(i) * x[i] - nb) + (1.0 - alpha) * x[i];
  }
}

double log_det_q(const EigenSpectrum& spectrum, double alpha) {
  double s = 0.0;
  for (double lambda : spectrum.lambdas) {
    const double factor = 1.0 - alpha * lambda;
    if (!(factor > 0.0))
      throw NumericError("log_det_q: factor 1 - alpha*lambda = " + std::to_string(factor) +
                         " is not positive (alpha = " + std::to_string(alpha) + ")");
    s += std::log1p(-alpha * lambda);
  }
  return s;
}

double log_det_q_derivative(const EigenSpectrum& spectrum, double alpha) {
  return -simd::active().inv_factor_sum(spectrum.lambdas.data(), alpha,
                                        static_cast<std::size_t>(spectrum.lambdas.size()));
}

double leroux_logpdf(const AreaGraph& graph, const EigenSpectrum& spectrum,
                     std::span<const double> x, double alpha, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  const double n = graph.n_areas();
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - n * std::log(sigma) +
         0.5 * log_det_q(spectrum, alpha) - quad_form(graph, alpha, x) / (2.0 * sigma * sigma);
}

double car_ar_logpdf(const AreaGraph& graph, const EigenSpectrum& spectrum, const StField& field,
                     const CarParams& params) {
  check_field(graph, field);
  check_alpha(params.alpha);
  if (!(params.sigma > 0.0)) throw ValidationError("sigma must be positive");
  const auto n_areas = graph.n_areas();
  const auto n_times = field.cols();
  const double n = n_areas;

  double quad = quad_form(graph, params.alpha, {field.col(0).data(), std::size_t(n_areas)});
  std::vector<double> innov(n_areas);
  for (Eigen::Index t = 1; t < n_times; ++t) {
    simd::ar_residual({field.col(t).data(), innov.size()}, {field.col(t - 1).data(), innov.size()},
                      params.rho, innov);
    quad += quad_form(graph, params.alpha, innov);
  }
  const double per_slice = -0.5 * n * std::log(2.0 * std::numbers::pi) -
                           n * std::log(params.sigma) + 0.5 * log_det_q(spectrum, params.alpha);
  return n_times * per_slice - quad / (2.0 * params.sigma * params.sigma);
}

StField noncentered(const StField& phi_star, const CarParams& params) {
  StField phi(phi_star.rows(), phi_star.cols());
  if (phi_star.cols() == 0) return phi;
  phi.col(0) = params.sigma * phi_star.col(0);
  for (Eigen::Index t = 1; t < phi_star.cols(); ++t)
    phi.col(t) = params.rho * phi.col(t - 1) + params.sigma * phi_star.col(t);
  return phi;
}

StField standardized_innovations(const StField& phi, const CarParams& params) {
  if (!(params.sigma > 0.0)) throw ValidationError("sigma must be positive");
  StField star(phi.rows(), phi.cols());
  if (phi.cols() == 0) return star;
  star.col(0) = phi.col(0) / params.sigma;
  for (Eigen::Index t = 1; t < phi.cols(); ++t)
    star.col(t) = (phi.col(t) - params.rho * phi.col(t - 1)) / params.sigma;
  return star;
}

double conditional_mean(const AreaGraph& graph, double alpha, std::span<const double> x,
                        std::int32_t i) {
  check_length(graph, x.size(), "conditional_mean");
  if (i < 0 || i >= graph.n_areas())
    throw ValidationError("area index " + std::to_string(i) + " out of range");
  double nb = 0.0;
  for (auto j : graph.neighbors(i)) nb += x[j];
  return alpha / (alpha * graph.degree(i) + 1.0 - alpha) * nb;
}

StField sample_car_field(const AreaGraph& graph, const CarParams& params, std::int32_t n_times,
                         Rng& rng) {
  if (!(params.alpha >= 0.0 && params.alpha < 1.0))
    throw ValidationError("sample_car_field requires alpha in [0, 1)");
  if (n_times < 1) throw ValidationError("sample_car_field requires T >= 1");
  const auto n = graph.n_areas();
  Eigen::MatrixXd q = -params.alpha * graph.adjacency_dense();
  for (std::int32_t i = 0; i < n; ++i) q(i, i) = params.alpha * graph.degree(i) + 1.0 - params.alpha;
  Eigen::LLT<Eigen::MatrixXd> chol(q);
  if (chol.info() != Eigen::Success) throw NumericError("Cholesky factorization of Q failed");

  // Q = U'U, so x = U⁻¹ z has covariance Q⁻¹.
  Eigen::MatrixXd z(n, n_times);
  for (std::int32_t t = 0; t < n_times; ++t)
    for (std::int32_t i = 0; i < n; ++i) z(i, t) = rng.normal();
  const Eigen::MatrixXd innov = chol.matrixU().solve(z);
  return noncentered(innov, params);
}

}  // namespace poiar
