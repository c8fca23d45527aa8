#pragma once

// Fixtures and independent dense reference implementations shared by the unit
// tests and the acceptance binary. Nothing here calls the sparse code paths it
// is used to check.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "poiar/graph.hpp"
#include "poiar/model.hpp"
#include "poiar/rng.hpp"
#include "poiar/simulate.hpp"

namespace poiar::testing {

// Erdős–Rényi graph on n areas with edge probability p.
inline AreaGraph random_graph(std::int32_t n, double p, Rng& rng) {
  std::vector<Edge> edges;
  for (std::int32_t i = 0; i < n; ++i)
    for (std::int32_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) edges.push_back({i, j});
  return build_graph(std::move(edges), n);
}

inline Eigen::MatrixXd dense_precision(const Eigen::MatrixXd& w, double alpha) {
  const Eigen::Index n = w.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  d.diagonal() = w.rowwise().sum();
  return alpha * (d - w) + (1.0 - alpha) * Eigen::MatrixXd::Identity(n, n);
}

// log|A| through an LU factorization.
inline double dense_log_det(const Eigen::MatrixXd& a) {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  return lu.matrixLU().diagonal().array().abs().log().sum();
}

// log N(x; 0, Σ) for Σ = σ² Q⁻¹, using Q directly.
inline double dense_mvn_precision_logpdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& q,
                                         double sigma) {
  const double n = static_cast<double>(x.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - n * std::log(sigma) +
         0.5 * dense_log_det(q) - 0.5 * x.dot(q * x) / (sigma * sigma);
}

// The same density through the covariance matrix and its inverse.
inline double dense_mvn_covariance_logpdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  const double n = static_cast<double>(x.size());
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(cov);
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * dense_log_det(cov) -
         0.5 * x.dot(lu.solve(x));
}

// Space-time density with the full (L·T)×(L·T) precision of the AR(1) chain of
// slices: block tridiagonal, built explicitly.
inline double dense_car_ar_logpdf(const Eigen::MatrixXd& w, const Eigen::MatrixXd& field,
                                  double alpha, double rho, double sigma) {
  const Eigen::Index l = field.rows(), t = field.cols();
  const Eigen::MatrixXd q = dense_precision(w, alpha);
  // Innovation map e = A φ with A lower block-bidiagonal; precision = Aᵀ (I⊗Q) A / σ².
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(l * t, l * t);
  for (Eigen::Index k = 1; k < t; ++k)
    a.block(k * l, (k - 1) * l, l, l) = -rho * Eigen::MatrixXd::Identity(l, l);
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(l * t, l * t);
  for (Eigen::Index k = 0; k < t; ++k) big.block(k * l, k * l, l, l) = q;
  const Eigen::MatrixXd prec = a.transpose() * big * a;
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(field.data(), l * t);
  return dense_mvn_precision_logpdf(x, prec, sigma);
}

// Slice-wise dense evaluation of the space-time density: dense Q, a dense
// Cholesky log-determinant and dense matrix-vector quadratic forms.
inline double dense_car_ar_slices(const Eigen::MatrixXd& w, const Eigen::MatrixXd& field,
                                  double alpha, double rho, double sigma) {
  const Eigen::Index l = field.rows(), t = field.cols();
  const Eigen::MatrixXd q = dense_precision(w, alpha);
  const Eigen::LLT<Eigen::MatrixXd> llt(q);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  double quad = 0.0;
  Eigen::VectorXd e(l);
  for (Eigen::Index k = 0; k < t; ++k) {
    e = field.col(k);
    if (k) e -= rho * field.col(k - 1);
    quad += e.dot(q * e);
  }
  const double n = static_cast<double>(l * t);
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - n * std::log(sigma) +
         0.5 * static_cast<double>(t) * log_det - 0.5 * quad / (sigma * sigma);
}

// A small simulated data bundle: rows×cols lattice, n_times weeks, generating
// design and truth from the simulator.
struct Fixture {
  AreaGraph graph;
  SimReplicate rep;
};

inline SimSpec small_spec(std::int32_t rows, std::int32_t cols, std::int32_t n_times,
                          std::uint64_t seed) {
  SimSpec s;
  s.lattice_rows = rows;
  s.lattice_cols = cols;
  s.n_times = n_times;
  s.seed = seed;
  s.tier_block_weeks = std::max(1, n_times / 6);
  s.summer = {std::min(1, n_times), std::min(2, n_times)};
  s.christmas = {std::min(n_times - 1, n_times), n_times};
  return s;
}

inline Fixture make_fixture(std::int32_t rows, std::int32_t cols, std::int32_t n_times,
                            std::uint64_t seed) {
  const SimSpec spec = small_spec(rows, cols, n_times, seed);
  Fixture f{spec.make_graph(), {}};
  f.rep = simulate_replicate(spec, f.graph, 0);
  return f;
}

inline Model make_model(const Fixture& f, Variant v,
                        FieldCoordinates fc = FieldCoordinates::whitened) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.field_coordinates = fc;
  return Model(f.graph, f.rep.panel, f.rep.design.designs, cfg);
}

// Five-point central differences of lp at z (truncation error O(h⁴)).
template <class F>
Eigen::VectorXd finite_difference_gradient(F&& lp, Eigen::VectorXd z, double h = 1e-4) {
  Eigen::VectorXd g(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    const double step = h * std::max(1.0, std::abs(zi));
    auto at = [&](double k) {
      z[i] = zi + k * step;
      return lp(z);
    };
    const double d = -at(2) + 8 * at(1) - 8 * at(-1) + at(-2);
    z[i] = zi;
    g[i] = d / (12.0 * step);
  }
  return g;
}

// Largest |a − b| / max(1, |a|, |b|) over components.
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline Eigen::VectorXd random_point(std::size_t dim, double radius, Rng& rng) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(dim));
  for (auto& v : z) v = rng.uniform(-radius, radius);
  return z;
}

}  // namespace poiar::testing
