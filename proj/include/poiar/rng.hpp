#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11) plus the few
// distributions the sampler and simulator need. Distributions are implemented
// here rather than taken from <random> so that a seed produces the same stream
// on every standard library.

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace poiar {

inline constexpr std::string_view kRngAlgorithm = "philox4x32-10/v1";

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

// One 10-round Philox block.
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

// splitmix64 finalizer; used to derive independent seeds for chains/replicates.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double half_normal(double scale);
  std::int64_t poisson(double mean);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  PhiloxKey key_{};
  PhiloxCounter ctr_{};
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace poiar
