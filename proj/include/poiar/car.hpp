#pragma once

// Leroux CAR and CAR-AR densities evaluated without ever forming Q densely.
//
//   Q(α, W) = α (D − W) + (1 − α) I = I − α M,   M = W + I − D
//
// Q is the precision structure: a slice φ_t has covariance σ² Q⁻¹.
// log|Q| = Σ_i log(1 − α λ_i) with λ the (α-free) eigenvalues of M.

#include <span>

#include <Eigen/Core>

#include "poiar/graph.hpp"

namespace poiar {

class Rng;

struct CarParams {
  double alpha = 0.5;  // spatial smoothing, (0, 1)
  double rho = 0.5;    // temporal autocorrelation, (0, 1)
  double sigma = 1.0;  // scale, > 0
};

// L×T matrix, column t is the spatial slice at time t.
using StField = Eigen::MatrixXd;

// xᵀ Q(α) x = α Σ_{i~j} (x_i − x_j)² + (1 − α) Σ x_i².
double quad_form(const AreaGraph& graph, double alpha, std::span<const double> x);

// out = Q(α) x via the compressed neighbor lists.
void precision_multiply(const AreaGraph& graph, double alpha, std::span<const double> x,
                        std::span<double> out);

double log_det_q(const EigenSpectrum& spectrum, double alpha);

// d/dα log|Q(α)| = −Σ λ_i / (1 − α λ_i).
double log_det_q_derivative(const EigenSpectrum& spectrum, double alpha);

// log N(x; 0, σ² Q(α)⁻¹).
double leroux_logpdf(const AreaGraph& graph, const EigenSpectrum& spectrum,
                     std::span<const double> x, double alpha, double sigma);

// First slice Leroux, later slices Leroux on the AR(1) innovation φ_t − ρ φ_{t−1}.
double car_ar_logpdf(const AreaGraph& graph, const EigenSpectrum& spectrum, const StField& field,
                     const CarParams& params);

// φ_1 = σ φ*_1,  φ_t = ρ φ_{t−1} + σ φ*_t.
StField noncentered(const StField& phi_star, const CarParams& params);

// Inverse of noncentered: recovers φ* from φ.
StField standardized_innovations(const StField& phi, const CarParams& params);

// E[x_i | x_{−i}] = α / (α N_i + 1 − α) · Σ_{j~i} x_j, the Gaussian conditional under Q.
double conditional_mean(const AreaGraph& graph, double alpha, std::span<const double> x,
                        std::int32_t i);

// Exact draw of an L×T CAR-AR field using a dense Cholesky factor of Q.
StField sample_car_field(const AreaGraph& graph, const CarParams& params, std::int32_t n_times,
                         Rng& rng);

}  // namespace poiar
