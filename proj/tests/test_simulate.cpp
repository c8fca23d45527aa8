#include <doctest.h>

#include <cmath>

#include "poiar/error.hpp"
#include "poiar/fit.hpp"
#include "poiar/rng.hpp"
#include "poiar/simulate.hpp"
#include "support.hpp"

using namespace poiar;
using namespace poiar::testing;

TEST_CASE("holdout mask marks exactly round(fraction * cells)") {
  Rng rng(61);
  for (double f : {0.0, 0.2, 0.33, 1.0}) {
    const MaskMatrix m = holdout_mask(5, 7, f, rng);
    const auto held = static_cast<long>(m.size() - m.count());
    CHECK(held == std::lround(f * 35));
  }
}

TEST_CASE("replicates are reproducible, share the design, and differ in truth") {
  const SimSpec spec = small_spec(3, 3, 10, 5);
  const AreaGraph g = spec.make_graph();
  const SimReplicate a = simulate_replicate(spec, g, 0);
  const SimReplicate a2 = simulate_replicate(spec, g, 0);
  const SimReplicate b = simulate_replicate(spec, g, 1);
  CHECK(a.panel.counts == a2.panel.counts);
  CHECK(a.panel.in_sample == a2.panel.in_sample);
  CHECK(a.design.designs.x == b.design.designs.x);
  CHECK(a.design.population == b.design.population);
  CHECK(a.truth.beta != b.truth.beta);
  CHECK(a.panel.counts != b.panel.counts);
}

TEST_CASE("synthetic design layout") {
  const SimSpec spec = small_spec(2, 2, 12, 6);
  Rng rng(1);
  const SimDesign d = make_sim_design(spec, 4, rng);
  const std::vector<std::string> names{"intercept", "area_1",   "area_2", "area_3",   "tier_II",
                                       "tier_III",  "tier_IV", "summer", "christmas"};
  CHECK(d.designs.x_names == names);
  CHECK(d.designs.v_names == std::vector<std::string>{"intercept"});
  CHECK(d.designs.x.col(0).isOnes());
  // Area covariates are constant in time; tier columns are one-hot or all zero.
  for (std::int32_t t = 1; t < 12; ++t)
    CHECK(d.designs.x(1 + 4 * t, 1) == d.designs.x(1, 1));
  for (Eigen::Index c = 0; c < d.designs.x.rows(); ++c) {
    const double tiers = d.designs.x(c, 4) + d.designs.x(c, 5) + d.designs.x(c, 6);
    CHECK((tiers == 0.0 || tiers == 1.0));
  }
  for (Eigen::Index l = 0; l < 4; ++l) {
    CHECK(d.population[l] >= spec.population_min);
    CHECK(d.population[l] <= spec.population_max);
  }
}

TEST_CASE("true parameters follow the generating recipe") {
  const SimSpec spec = small_spec(3, 3, 6, 7);
  const AreaGraph g = spec.make_graph();
  Rng rng(3);
  const ParameterSet p = draw_true_params(spec, g, 9, rng);
  CHECK(p.w.isApprox(spec.true_w));
  CHECK(p.beta[4] == doctest::Approx(std::log(5.0 / 6.0)));
  CHECK(p.beta[5] == doctest::Approx(std::log(2.0 / 3.0)));
  CHECK(p.beta[6] == doctest::Approx(std::log(0.5)));
  CHECK(p.beta[7] == doctest::Approx(std::log(2.5)));
  CHECK(p.beta[8] == doctest::Approx(std::log(0.4)));
  for (const auto* th : {&p.theta_phi, &p.theta_psi}) {
    CHECK(th->alpha > 0.0);
    CHECK(th->alpha < 1.0);
    CHECK(th->rho > 0.0);
    CHECK(th->rho < 1.0);
    CHECK(th->sigma > 0.0);
  }
  CHECK(p.phi_star.rows() == 9);
  CHECK(p.phi_star.cols() == 6);
}

TEST_CASE("generated panels respect the rate ceiling") {
  SimSpec spec = small_spec(3, 3, 15, 8);
  const AreaGraph g = spec.make_graph();
  for (int b = 0; b < 5; ++b) {
    const SimReplicate r = simulate_replicate(spec, g, b);
    const Model m(g, r.panel, r.design.designs, spec.model);
    const auto rc = rate_components(m, r.truth);
    for (std::int32_t c = 0; c < m.n_cells(); ++c)
      CHECK(rc.lambda[c] / r.panel.population[c % 9] * 1e4 <= spec.max_rate_per_10k);
  }
  spec.max_rate_per_10k = 1e-9;
  spec.max_redraws = 3;
  CHECK_THROWS_AS(simulate_replicate(spec, g, 0), NumericError);
}

TEST_CASE("counts are Poisson around the generating rate") {
  // With the truth fixed, the mean count at a cell matches λ under replication.
  const SimSpec spec = small_spec(2, 2, 3, 9);
  const AreaGraph g = spec.make_graph();
  const SimReplicate r = simulate_replicate(spec, g, 0);
  Rng rng(77);
  double sum = 0.0;
  const int reps = 4000;
  for (int k = 0; k < reps; ++k) {
    const auto p = gen_panel(spec, r.design, g, r.truth, rng, &r.panel.pre_counts);
    REQUIRE(p.has_value());
    sum += double(p->counts(1, 0));
  }
  const Model m(g, r.panel, r.design.designs, spec.model);
  const double lam = rate(m, r.truth, 1, 0);  // week 0 only depends on the fixed pre-period
  CHECK(sum / reps == doctest::Approx(lam).epsilon(0.03));
}

TEST_CASE("spec validation") {
  SimSpec s;
  s.holdout = 1.5;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.n_times = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  CHECK(s.canonical() == SimSpec{}.canonical());
  SimSpec t;
  t.seed = 2;
  CHECK(fnv1a(s.canonical()) != fnv1a(t.canonical()));
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("constrained names and rows line up") {
  const Fixture f = make_fixture(2, 2, 3, 10);
  const Model m = make_model(f, Variant::d);
  const auto names = constrained_names(m);
  const Eigen::VectorXd row = constrained_row(m, f.rep.truth);
  CHECK(static_cast<Eigen::Index>(names.size()) == row.size());
  CHECK(names.front() == "beta[intercept]");
  CHECK(names[9] == "eta[intercept]");
  CHECK(names[10] == "w[1]");
  CHECK(names[13] == "alpha_phi");
  CHECK(names[19] == "phi[0:0]");
  CHECK(names[20] == "phi[1:0]");
  CHECK(row[13] == f.rep.truth.theta_phi.alpha);
  const StField phi = noncentered(f.rep.truth.phi_star, f.rep.truth.theta_phi);
  CHECK(row[20] == phi(1, 0));
  const Model a = make_model(f, Variant::a);
  for (const auto& n : constrained_names(a)) {
    CHECK(n.find("phi") == std::string::npos);
    CHECK(n.find("psi") == std::string::npos);
  }
}
