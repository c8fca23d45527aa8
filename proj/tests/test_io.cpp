#include <doctest.h>

#include <sstream>

#include "poiar/error.hpp"
#include "poiar/io.hpp"
#include "poiar/rng.hpp"
#include "support.hpp"

using namespace poiar;

namespace {

CountData counts_from(const std::string& text) {
  std::istringstream in(text);
  return read_counts(in, "counts.csv");
}

}  // namespace

TEST_CASE("counts: complete panel in long format") {
  const auto d = counts_from(
      "area_id,week_index,count,population\n"
      "# comment\n"
      "B,0,1,100\nB,1,2,100\nB,2,3,100\n"
      "\n"
      "A,2,6,200\nA,0,4,200\nA,1,5,200\n");
  CHECK(d.area_ids == std::vector<std::string>{"B", "A"});
  CHECK(d.panel.n_areas() == 2);
  CHECK(d.panel.n_times() == 3);
  CHECK(d.panel.counts(1, 0) == 4);
  CHECK(d.panel.counts(0, 2) == 3);
  CHECK(d.panel.population[1] == 200.0);
  CHECK(d.panel.offset[1] == doctest::Approx(0.02));
  CHECK(d.panel.in_sample.all());
  CHECK(d.ignored_lines == 2);
}

TEST_CASE("counts: columns in any order, mask and pre-period") {
  const auto d = counts_from(
      "count,in_sample,population,week_index,area_id\n"
      "7,1,50,-1,x\n8,1,50,-2,x\n9,1,50,-3,x\n1,0,50,0,x\n2,1,50,1,x\n");
  CHECK(d.panel.n_pre() == 3);
  CHECK(d.panel.pre_counts(0, 0) == 7);
  CHECK(d.panel.pre_counts(0, 2) == 9);
  CHECK(d.panel.count_at(0, -2) == 8);
  CHECK_FALSE(d.panel.in_sample(0, 0));
  CHECK(d.panel.in_sample(0, 1));
}

TEST_CASE("counts: errors name the row or the cell") {
  CHECK_THROWS_WITH_AS(counts_from("area_id,week_index,count,population\n"
                                   "A,0,1,10\nA,1,2,10\nB,0,1,20\n"),
                       doctest::Contains("area 'B', week 1"), ValidationError);
  CHECK_THROWS_WITH_AS(counts_from("area_id,week_index,count,population\nA,0,-1,10\n"),
                       doctest::Contains("counts.csv:2"), ValidationError);
  CHECK_THROWS_WITH_AS(counts_from("area_id,week_index,count,population\nA,0,1,10\nA,1,1,11\n"),
                       doctest::Contains("counts.csv:3"), ValidationError);
  CHECK_THROWS_WITH_AS(counts_from("area_id,week_index,count,population\nA,0,1,10\nA,0,1,10\n"),
                       doctest::Contains("duplicate"), ValidationError);
  CHECK_THROWS_AS(counts_from("area_id,week_index,count\nA,0,1\n"), ValidationError);
  CHECK_THROWS_AS(counts_from("area_id,week_index,count,population,extra\n"), ValidationError);
  CHECK_THROWS_WITH_AS(counts_from("area_id,week_index,count,population\nA,zero,1,10\n"),
                       doctest::Contains("week_index"), ValidationError);
  CHECK_THROWS_AS(counts_from("area_id,week_index,count,population\nA,0,1\n"), ValidationError);
}

TEST_CASE("edge list parsing") {
  std::istringstream in("# lattice\narea_count=3\n0,1\n# mid\n1,2\n");
  const AreaGraph g = read_edge_list(in);
  CHECK(g.n_areas() == 3);
  CHECK(g.n_edges() == 2);
  std::ostringstream out;
  write_edge_list(out, g);
  std::istringstream back(out.str());
  CHECK(read_edge_list(back).edges().size() == 2);
  std::istringstream bad("0,1\n");
  CHECK_THROWS_AS(read_edge_list(bad), ValidationError);
  std::istringstream loop("area_count=2\n1,1\n");
  CHECK_THROWS_AS(read_edge_list(loop), ValidationError);
}

TEST_CASE("covariates: bindings, broadcasting and standardization") {
  const std::vector<std::string> ids{"A", "B"};
  const std::string text =
      "area_id,week_index,name,value\n"
      "A,,size,3\nB,,size,5\n"
      "A,0,mob,1\nA,1,mob,2\nA,2,mob,3\n"
      "B,0,mob,10\nB,1,mob,30\nB,2,mob,20\n"
      "A,-1,mob,0\n";
  CovariateBindings b;
  b.growth = {"mob"};
  b.baseline = {"size"};
  b.per_area = {"mob"};
  std::istringstream in(text);
  std::int64_t ignored = 0;
  const DesignMatrices d = read_covariates(in, ids, 3, b, "cov", &ignored);
  CHECK(ignored == 1);
  CHECK(d.x_names == std::vector<std::string>{"intercept", "mob"});
  CHECK(d.v_names == std::vector<std::string>{"intercept", "size"});
  CHECK(d.v(0, 1) == 3.0);
  CHECK(d.v(5, 1) == 5.0);
  CHECK(d.x(0, 1) == doctest::Approx(-1.0));  // A week 0 → (1 − 2)/1
  CHECK(d.x(3, 1) == doctest::Approx(1.0));   // B week 1 → (30 − 20)/10

  CovariateBindings unknown;
  unknown.growth = {"nope"};
  std::istringstream in2(text);
  CHECK_THROWS_WITH_AS(read_covariates(in2, ids, 3, unknown), doctest::Contains("nope"),
                       ValidationError);
  CovariateBindings flat;
  flat.baseline = {"size"};
  flat.per_area = {"size"};
  std::istringstream in3(text);
  CHECK_THROWS_AS(read_covariates(in3, ids, 3, flat), ValidationError);
  std::istringstream in4("area_id,week_index,name,value\nC,0,mob,1\n");
  CHECK_THROWS_AS(read_covariates(in4, ids, 3, b), ValidationError);
  CovariateBindings missing;
  missing.growth = {"mob"};
  std::istringstream in5("area_id,week_index,name,value\nA,0,mob,1\n");
  CHECK_THROWS_WITH_AS(read_covariates(in5, ids, 3, missing), doctest::Contains("missing"),
                       ValidationError);
}

TEST_CASE("indicator covariates pass through unstandardized") {
  const std::vector<std::string> ids{"A"};
  std::istringstream in("area_id,week_index,name,value\nA,0,tier,0\nA,1,tier,1\nA,2,tier,1\n");
  CovariateBindings b;
  b.growth = {"tier"};
  const DesignMatrices d = read_covariates(in, ids, 3, b);
  CHECK(d.x(0, 1) == 0.0);
  CHECK(d.x(2, 1) == 1.0);
}

TEST_CASE("config file") {
  RunSettings s;
  std::istringstream in(
      "[model]\nvariant = b\ntau = 2\ndepletion = literal\n"
      "[priors]\nsigma_psi_scale = 0.5\n"
      "[sampler]\nchains = 3\nseed = 17\n"
      "[covariates]\ngrowth = a, b\nstandardize_global = b\n"
      "[simulate]\nweeks = 12\n");
  apply_config(in, s);
  CHECK(s.model.variant == Variant::b);
  CHECK(s.model.tau == 2);
  CHECK(s.model.depletion == DepletionMode::literal);
  CHECK(s.model.priors.sigma_psi_scale == 0.5);
  CHECK(s.nuts.n_chains == 3);
  CHECK(s.nuts.seed == 17);
  CHECK(s.bindings.growth == std::vector<std::string>{"a", "b"});
  CHECK(s.bindings.global.count("b") == 1);
  CHECK(s.sim.n_times == 12);

  std::istringstream bad("[model]\nvarient = b\n");
  CHECK_THROWS_WITH_AS(apply_config(bad, s), doctest::Contains("varient"), ValidationError);
  std::istringstream bad_section("[modle]\nvariant = b\n");
  CHECK_THROWS_AS(apply_config(bad_section, s), ValidationError);
  std::istringstream bad_value("[sampler]\nchains = many\n");
  CHECK_THROWS_AS(apply_config(bad_value, s), ValidationError);
  CHECK(config_keys_help().find("max_treedepth") != std::string::npos);
}

TEST_CASE("draw matrices round-trip exactly") {
  Rng rng(71);
  Eigen::MatrixXd m(17, 4);
  for (auto& v : m.reshaped()) v = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
  m(0, 0) = -0.0;
  m(1, 1) = 1e-320;  // subnormal
  const std::vector<std::string> names{"beta[intercept]", "phi[0:1]", "w[2]", "sigma_phi"};
  std::ostringstream out;
  write_matrix_csv(out, names, m);
  std::istringstream in(out.str());
  std::vector<std::string> back_names;
  Eigen::MatrixXd back;
  read_matrix_csv(in, back_names, back);
  CHECK(back_names == names);
  CHECK(back == m);
}

TEST_CASE("written counts re-ingest to the same panel") {
  const auto f = poiar::testing::make_fixture(3, 2, 5, 72);
  const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
  std::ostringstream out;
  write_counts(out, f.rep.panel, ids);
  const auto d = counts_from(out.str());
  CHECK(d.area_ids == ids);
  CHECK(d.panel.counts == f.rep.panel.counts);
  CHECK(d.panel.pre_counts == f.rep.panel.pre_counts);
  CHECK(d.panel.population == f.rep.panel.population);
  CHECK(d.panel.in_sample == f.rep.panel.in_sample);

  std::ostringstream cov;
  write_covariates(cov, f.rep.design.designs, ids, 6);
  CovariateBindings b;
  const auto& xn = f.rep.design.designs.x_names;
  b.growth.assign(xn.begin() + 1, xn.end());
  std::istringstream cin(cov.str());
  const DesignMatrices back = read_covariates(cin, ids, 5, b);
  CHECK(back.x == f.rep.design.designs.x);
}
