#include <arm_neon.h>

#include "poiar/simd.hpp"

namespace poiar::simd {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + k), vld1q_f64(b + k));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + k + 2), vld1q_f64(b + k + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

double sum_sq_neon(const double* a, std::size_t n) { return dot_neon(a, a, n); }

double sum_neon(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) acc = vaddq_f64(acc, vld1q_f64(a + k));
  double s = vaddvq_f64(acc);
  for (; k < n; ++k) s += a[k];
  return s;
}

// No gather on NEON; pairs of lanes are assembled from scalar loads.
double edge_sq_diff_neon(const double* x, const std::int32_t* i, const std::int32_t* j,
                         std::size_t n_edges) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t e = 0;
  for (; e + 2 <= n_edges; e += 2) {
    const double xi[2] = {x[i[e]], x[i[e + 1]]};
    const double xj[2] = {x[j[e]], x[j[e + 1]]};
    const float64x2_t d = vsubq_f64(vld1q_f64(xi), vld1q_f64(xj));
    acc = vfmaq_f64(acc, d, d);
  }
  double s = vaddvq_f64(acc);
  for (; e < n_edges; ++e) {
    const double d = x[i[e]] - x[j[e]];
    s += d * d;
  }
  return s;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) vst1q_f64(y + k, vfmaq_f64(vld1q_f64(y + k), va, vld1q_f64(x + k)));
  for (; k < n; ++k) y[k] += a * x[k];
}

void scaled_axpy_neon(double a, const double* m, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const float64x2_t mx = vmulq_f64(vld1q_f64(m + k), vld1q_f64(x + k));
    vst1q_f64(y + k, vfmaq_f64(vld1q_f64(y + k), va, mx));
  }
  for (; k < n; ++k) y[k] += a * (m[k] * x[k]);
}

void ar_residual_neon(const double* cur, const double* prev, double rho, double* out,
                      std::size_t n) {
  const float64x2_t vr = vdupq_n_f64(rho);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2)
    vst1q_f64(out + k, vfmsq_f64(vld1q_f64(cur + k), vr, vld1q_f64(prev + k)));
  for (; k < n; ++k) out[k] = cur[k] - rho * prev[k];
}

double inv_factor_sum_neon(const double* lambda, double alpha, std::size_t n) {
  const float64x2_t one = vdupq_n_f64(1.0);
  const float64x2_t va = vdupq_n_f64(alpha);
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const float64x2_t l = vld1q_f64(lambda + k);
    acc = vaddq_f64(acc, vdivq_f64(l, vfmsq_f64(one, va, l)));
  }
  double s = vaddvq_f64(acc);
  for (; k < n; ++k) s += lambda[k] / (1.0 - alpha * lambda[k]);
  return s;
}

}  // namespace

const KernelTable& neon_kernels() {
  static const KernelTable table{Isa::neon,        dot_neon,         sum_sq_neon,
                                 sum_neon,         edge_sq_diff_neon, axpy_neon,
                                 scaled_axpy_neon, ar_residual_neon, inv_factor_sum_neon};
  return table;
}

}  // namespace poiar::simd
