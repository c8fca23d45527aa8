// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "poiar/simd.hpp"

namespace poiar::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4), acc1);
  }
  for (; k + 4 <= n; k += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

double sum_sq_avx2(const double* a, std::size_t n) { return dot_avx2(a, a, n); }

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + k));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + k + 4));
  }
  for (; k + 4 <= n; k += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + k));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) s += a[k];
  return s;
}

double edge_sq_diff_avx2(const double* x, const std::int32_t* i, const std::int32_t* j,
                         std::size_t n_edges) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t e = 0;
  for (; e + 4 <= n_edges; e += 4) {
    const __m128i ii = _mm_loadu_si128(reinterpret_cast<const __m128i*>(i + e));
    const __m128i jj = _mm_loadu_si128(reinterpret_cast<const __m128i*>(j + e));
    const __m256d d = _mm256_sub_pd(_mm256_i32gather_pd(x, ii, 8), _mm256_i32gather_pd(x, jj, 8));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; e < n_edges; ++e) {
    const double d = x[i[e]] - x[j[e]];
    s += d * d;
  }
  return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4)
    _mm256_storeu_pd(y + k, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k)));
  for (; k < n; ++k) y[k] += a * x[k];
}

void scaled_axpy_avx2(double a, const double* m, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d mx = _mm256_mul_pd(_mm256_loadu_pd(m + k), _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(y + k, _mm256_fmadd_pd(va, mx, _mm256_loadu_pd(y + k)));
  }
  for (; k < n; ++k) y[k] += a * (m[k] * x[k]);
}

void ar_residual_avx2(const double* cur, const double* prev, double rho, double* out,
                      std::size_t n) {
  const __m256d vr = _mm256_set1_pd(rho);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4)
    _mm256_storeu_pd(out + k,
                     _mm256_fnmadd_pd(vr, _mm256_loadu_pd(prev + k), _mm256_loadu_pd(cur + k)));
  for (; k < n; ++k) out[k] = cur[k] - rho * prev[k];
}

double inv_factor_sum_avx2(const double* lambda, double alpha, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d va = _mm256_set1_pd(alpha);
  __m256d acc = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d l = _mm256_loadu_pd(lambda + k);
    acc = _mm256_add_pd(acc, _mm256_div_pd(l, _mm256_fnmadd_pd(va, l, one)));
  }
  double s = hsum(acc);
  for (; k < n; ++k) s += lambda[k] / (1.0 - alpha * lambda[k]);
  return s;
}

}  // namespace

const KernelTable& avx2_kernels() {
  static const KernelTable table{Isa::avx2,        dot_avx2,         sum_sq_avx2,
                                 sum_avx2,         edge_sq_diff_avx2, axpy_avx2,
                                 scaled_axpy_avx2, ar_residual_avx2, inv_factor_sum_avx2};
  return table;
}

}  // namespace poiar::simd
