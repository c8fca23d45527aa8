#include <doctest.h>

#include <cmath>
#include <vector>

#include "poiar/rng.hpp"

using namespace poiar;

TEST_CASE("philox4x32-10 known answers") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                      {0xffffffffu, 0xffffffffu}) ==
        PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                      {0xa4093822u, 0x299f31d0u}) ==
        PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
  Rng a(42), b(42), c(42, 1), d(43);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    differs_c |= x != c();
    differs_d |= x != d();
  }
  CHECK(differs_c);
  CHECK(differs_d);
  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(mix_seed(1, 2, 0) != mix_seed(1, 2, 1));
}

TEST_CASE("distribution moments") {
  Rng rng(7);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0, sh = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    sh += rng.half_normal(2.0);
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(sh / n == doctest::Approx(2.0 * std::sqrt(2.0 / M_PI)).epsilon(0.01));
}

TEST_CASE("poisson mean and variance across regimes") {
  Rng rng(9);
  for (double mu : {0.0, 0.3, 4.0, 25.0, 900.0}) {
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double k = static_cast<double>(rng.poisson(mu));
      REQUIRE(k >= 0.0);
      s += k;
      s2 += k * k;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CAPTURE(mu);
    CHECK(std::abs(mean - mu) < 5 * std::sqrt(std::max(mu, 1e-3) / n) + 1e-12);
    if (mu > 0) CHECK(var == doctest::Approx(mu).epsilon(0.03));
  }
}

TEST_CASE("below is uniform over its range") {
  Rng rng(11);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) ++hits[rng.below(7)];
  for (int h : hits) CHECK(std::abs(h - 10000) < 500);
}
