#include "poiar/simd.hpp"

namespace poiar::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

double sum_sq_scalar(const double* a, std::size_t n) { return dot_scalar(a, a, n); }

double sum_scalar(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k];
  return s;
}

double edge_sq_diff_scalar(const double* x, const std::int32_t* i, const std::int32_t* j,
                           std::size_t n_edges) {
  double s = 0.0;
  for (std::size_t e = 0; e < n_edges; ++e) {
    const double d = x[i[e]] - x[j[e]];
    s += d * d;
  }
  return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

void scaled_axpy_scalar(double a, const double* m, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * (m[k] * x[k]);
}

void ar_residual_scalar(const double* cur, const double* prev, double rho, double* out,
                        std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = cur[k] - rho * prev[k];
}

double inv_factor_sum_scalar(const double* lambda, double alpha, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += lambda[k] / (1.0 - alpha * lambda[k]);
  return s;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar,        dot_scalar,         sum_sq_scalar,
                                 sum_scalar,         edge_sq_diff_scalar, axpy_scalar,
                                 scaled_axpy_scalar, ar_residual_scalar, inv_factor_sum_scalar};
  return table;
}

}  // namespace poiar::simd
