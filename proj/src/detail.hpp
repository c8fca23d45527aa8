#pragma once

#include <cmath>
#include <numbers>
#include <span>

#include <Eigen/Core>

#include "poiar/graph.hpp"

namespace poiar::detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log √(2π)

inline double normal_lpdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * u * u;
}

// (1 − αλ_k)^−½ for each eigenvalue of M; throws NumericError if Q(α) is not positive definite.
Eigen::VectorXd whitening_scales(const EigenSpectrum& spectrum, double alpha);

// Adds ∂/∂y of (f(w(y)) + log|J(y)|) to grad_y, given ∂f/∂w.
void simplex_gradient(std::span<const double> y, std::span<const double> grad_w,
                      std::span<double> grad_y);

}  // namespace poiar::detail
