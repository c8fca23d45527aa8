#pragma once

// Data-parallel inner loops used by the CAR densities, the model gradient and
// the leapfrog integrator. Every kernel has a scalar reference implementation;
// vectorized variants are selected once at startup from the host CPU features.
// Set POIAR_SIMD=scalar in the environment to force the reference path.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace poiar::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // Σ_e (x[i_e] − x[j_e])² over an edge list in struct-of-arrays form.
  double (*edge_sq_diff)(const double* x, const std::int32_t* i, const std::int32_t* j,
                         std::size_t n_edges);
  // y += a·x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y += a·(m ⊙ x)
  void (*scaled_axpy)(double a, const double* m, const double* x, double* y, std::size_t n);
  // out = cur − rho·prev
  void (*ar_residual)(const double* cur, const double* prev, double rho, double* out,
                      std::size_t n);
  // Σ λ_i / (1 − α λ_i)
  double (*inv_factor_sum)(const double* lambda, double alpha, std::size_t n);
};

const KernelTable& scalar_kernels();
#if defined(POIAR_HAVE_AVX2)
const KernelTable& avx2_kernels();
#endif
#if defined(__aarch64__)
const KernelTable& neon_kernels();
#endif

// Kernels selected for this process.
const KernelTable& active();

// Kernels for a specific ISA, or nullptr if the build/host lacks it.
const KernelTable* kernels_for(Isa isa);

std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double sum_sq(std::span<const double> a) { return active().sum_sq(a.data(), a.size()); }
inline double sum(std::span<const double> a) { return active().sum(a.data(), a.size()); }
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void scaled_axpy(double a, std::span<const double> m, std::span<const double> x,
                        std::span<double> y) {
  active().scaled_axpy(a, m.data(), x.data(), y.data(), x.size());
}
inline void ar_residual(std::span<const double> cur, std::span<const double> prev, double rho,
                        std::span<double> out) {
  active().ar_residual(cur.data(), prev.data(), rho, out.data(), cur.size());
}

}  // namespace poiar::simd
