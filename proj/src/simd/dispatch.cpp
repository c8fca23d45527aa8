#include <cstdlib>
#include <string>

#include "poiar/simd.hpp"

namespace poiar::simd {
namespace {

bool host_has_avx2() {
#if defined(POIAR_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* forced = std::getenv("POIAR_SIMD"); forced && std::string(forced) == "scalar")
    return scalar_kernels();
#if defined(POIAR_HAVE_AVX2)
  if (host_has_avx2()) return avx2_kernels();
#endif
#if defined(__aarch64__)
  return neon_kernels();
#endif
  return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

const KernelTable* kernels_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &scalar_kernels();
    case Isa::avx2:
#if defined(POIAR_HAVE_AVX2)
      if (host_has_avx2()) return &avx2_kernels();
#endif
      return nullptr;
    case Isa::neon:
#if defined(__aarch64__)
      return &neon_kernels();
#endif
      return nullptr;
  }
  return nullptr;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace poiar::simd
