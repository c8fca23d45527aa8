#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "poiar/car.hpp"
#include "poiar/error.hpp"
#include "poiar/graph.hpp"
#include "support.hpp"

using namespace poiar;
using namespace poiar::testing;

TEST_CASE("graph validation names the offending edge") {
  CHECK_THROWS_WITH_AS(build_graph({{0, 0}}, 3), doctest::Contains("(0,0)"), ValidationError);
  CHECK_THROWS_AS(build_graph({{0, 1}, {1, 0}}, 3), ValidationError);
  CHECK_THROWS_AS(build_graph({{0, 3}}, 3), ValidationError);
  CHECK_THROWS_AS(build_graph({{-1, 2}}, 3), ValidationError);
  CHECK_THROWS_AS(build_graph({}, 0), ValidationError);
}

TEST_CASE("lattice structure") {
  const AreaGraph g = lattice_graph(3, 4);
  CHECK(g.n_areas() == 12);
  CHECK(g.n_edges() == 3 * 3 + 2 * 4);
  CHECK(g.degree(0) == 2);
  CHECK(g.degree(5) == 4);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(4, 0));
  CHECK_FALSE(g.has_edge(0, 5));
  CHECK(g.n_components() == 1);
  const auto nb = g.neighbors(5);
  CHECK(std::is_sorted(nb.begin(), nb.end()));
  const Eigen::MatrixXd w = g.adjacency_dense();
  CHECK(w.isApprox(w.transpose()));
  CHECK(w.sum() == doctest::Approx(2.0 * g.n_edges()));
  CHECK(build_graph({{0, 1}, {2, 3}}, 5).n_components() == 3);
}

TEST_CASE("quadratic form and precision product match the dense precision") {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const auto n = static_cast<std::int32_t>(2 + rng.below(30));
    const AreaGraph g = random_graph(n, 0.2, rng);
    const double alpha = rng.uniform_open();
    const Eigen::VectorXd x = random_point(n, 2.0, rng);
    const Eigen::MatrixXd q = dense_precision(g.adjacency_dense(), alpha);
    CHECK(quad_form(g, alpha, {x.data(), std::size_t(n)}) ==
          doctest::Approx(x.dot(q * x)).epsilon(1e-12));
    Eigen::VectorXd out(n);
    precision_multiply(g, alpha, {x.data(), std::size_t(n)}, {out.data(), std::size_t(n)});
    CHECK((out - q * x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("leroux density matches a dense covariance-based normal") {
  Rng rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    const auto n = static_cast<std::int32_t>(1 + rng.below(25));
    const AreaGraph g = random_graph(n, 0.25, rng);
    const EigenSpectrum spec = eigen_spectrum(g);
    const double alpha = rng.uniform_open(), sigma = rng.uniform(0.1, 3.0);
    const Eigen::VectorXd x = random_point(n, 1.0, rng);
    const Eigen::MatrixXd q = dense_precision(g.adjacency_dense(), alpha);
    const Eigen::MatrixXd cov = sigma * sigma * q.inverse();
    CHECK(leroux_logpdf(g, spec, {x.data(), std::size_t(n)}, alpha, sigma) ==
          doctest::Approx(dense_mvn_covariance_logpdf(x, cov)).epsilon(1e-9));
    CHECK(log_det_q(spec, alpha) == doctest::Approx(dense_log_det(q)).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("log-determinant derivative matches differences") {
  Rng rng(23);
  const AreaGraph g = random_graph(20, 0.3, rng);
  const EigenSpectrum s = eigen_spectrum(g);
  for (double a : {0.05, 0.5, 0.95}) {
    const double h = 1e-6;
    const double fd = (log_det_q(s, a + h) - log_det_q(s, a - h)) / (2 * h);
    CHECK(log_det_q_derivative(s, a) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("spectrum of M lies in (-inf, 1] with 1 attained per component") {
  Rng rng(24);
  const AreaGraph g = random_graph(30, 0.1, rng);
  const EigenSpectrum s = eigen_spectrum(g);
  CHECK(s.lambdas.maxCoeff() == doctest::Approx(1.0));
  const auto ones = std::count_if(s.lambdas.begin(), s.lambdas.end(),
                                  [](double l) { return std::abs(l - 1.0) < 1e-9; });
  CHECK(ones == g.n_components());
}

TEST_CASE("relabeling areas leaves the density unchanged") {
  Rng rng(25);
  const AreaGraph g = random_graph(15, 0.3, rng);
  std::vector<std::int32_t> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const AreaGraph h = g.permuted(perm);
  const Eigen::VectorXd x = random_point(15, 1.0, rng);
  Eigen::VectorXd y(15);
  for (int k = 0; k < 15; ++k) y[perm[k]] = x[k];
  CHECK(leroux_logpdf(g, eigen_spectrum(g), {x.data(), 15}, 0.7, 0.8) ==
        doctest::Approx(leroux_logpdf(h, eigen_spectrum(h), {y.data(), 15}, 0.7, 0.8)).epsilon(1e-10));
}

TEST_CASE("space-time density matches the full dense precision") {
  Rng rng(26);
  for (int rep = 0; rep < 5; ++rep) {
    const auto n = static_cast<std::int32_t>(2 + rng.below(8));
    const std::int32_t t = 1 + static_cast<std::int32_t>(rng.below(5));
    const AreaGraph g = random_graph(n, 0.4, rng);
    const CarParams p{rng.uniform_open(), rng.uniform_open(), rng.uniform(0.2, 2.0)};
    StField f(n, t);
    for (auto& v : f.reshaped()) v = rng.normal();
    CHECK(car_ar_logpdf(g, eigen_spectrum(g), f, p) ==
          doctest::Approx(dense_car_ar_logpdf(g.adjacency_dense(), f, p.alpha, p.rho, p.sigma))
              .epsilon(1e-9));
  }
}

TEST_CASE("non-centered map round-trips") {
  Rng rng(27);
  StField star(6, 5);
  for (auto& v : star.reshaped()) v = rng.normal();
  const CarParams p{0.4, 0.8, 0.3};
  const StField phi = noncentered(star, p);
  CHECK(phi.col(0).isApprox(0.3 * star.col(0)));
  CHECK(phi.col(3).isApprox(0.8 * phi.col(2) + 0.3 * star.col(3)));
  CHECK(standardized_innovations(phi, p).isApprox(star, 1e-12));
}

TEST_CASE("conditional mean equals the Gaussian conditional from Q") {
  Rng rng(28);
  const AreaGraph g = random_graph(12, 0.3, rng);
  const Eigen::MatrixXd q = dense_precision(g.adjacency_dense(), 0.6);
  const Eigen::VectorXd x = random_point(12, 1.0, rng);
  for (std::int32_t i = 0; i < 12; ++i) {
    const double expected = -(q.row(i).dot(x) - q(i, i) * x[i]) / q(i, i);
    CHECK(conditional_mean(g, 0.6, {x.data(), 12}, i) == doctest::Approx(expected).epsilon(1e-12));
  }
  // At α → 1 the conditional mean is the neighbor average.
  const double avg_ish = conditional_mean(g, 1.0 - 1e-12, {x.data(), 12}, 0);
  double s = 0;
  for (auto j : g.neighbors(0)) s += x[j];
  if (g.degree(0) > 0) CHECK(avg_ish == doctest::Approx(s / g.degree(0)).epsilon(1e-9));
}

TEST_CASE("sampled fields have the model covariance") {
  Rng rng(29);
  const AreaGraph g = lattice_graph(2, 3);
  const CarParams p{0.7, 0.0, 1.3};
  const Eigen::MatrixXd cov = p.sigma * p.sigma * dense_precision(g.adjacency_dense(), p.alpha).inverse();
  const int draws = 20000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(6, 6);
  for (int k = 0; k < draws; ++k) {
    const StField f = sample_car_field(g, p, 1, rng);
    acc += f.col(0) * f.col(0).transpose();
  }
  acc /= draws;
  CHECK((acc - cov).cwiseAbs().maxCoeff() < 0.06 * cov.cwiseAbs().maxCoeff());
}
