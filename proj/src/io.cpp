#include "poiar/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "poiar/error.hpp"

namespace poiar {

namespace {

std::string where(const std::string& source, std::int64_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

std::int64_t parse_int(const std::string& s, const std::string& ctx, const char* what) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw ValidationError(ctx + "invalid " + what + " '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const std::string& ctx, const char* what) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw ValidationError(ctx + "invalid " + what + " '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& ctx, const char* what) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "1" || l == "true" || l == "yes") return true;
  if (l == "0" || l == "false" || l == "no") return false;
  throw ValidationError(ctx + "invalid " + what + " '" + s + "'");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return in;
}

bool skippable(const std::string& line) {
  const auto t = trim(line);
  return t.empty() || t[0] == '#';
}

// Header → column index, with required names checked.
std::map<std::string, std::size_t> header_index(const std::string& line,
                                                const std::vector<std::string>& required,
                                                const std::vector<std::string>& optional,
                                                const std::string& source) {
  std::map<std::string, std::size_t> idx;
  const auto cols = split_csv_line(line);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const bool known = std::find(required.begin(), required.end(), cols[i]) != required.end() ||
                       std::find(optional.begin(), optional.end(), cols[i]) != optional.end();
    if (!known) throw ValidationError(source + ": unknown column '" + cols[i] + "' in header");
    if (!idx.emplace(cols[i], i).second)
      throw ValidationError(source + ": duplicate column '" + cols[i] + "' in header");
  }
  for (const auto& r : required)
    if (!idx.count(r)) throw ValidationError(source + ": header lacks column '" + r + "'");
  return idx;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                     : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge lists

AreaGraph read_edge_list(std::istream& in, const std::string& source) {
  std::string line;
  std::int64_t n_line = 0;
  std::int64_t n_areas = -1;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++n_line;
    if (skippable(line)) continue;
    const auto t = trim(line);
    if (n_areas < 0) {
      const std::string key = "area_count=";
      if (t.rfind(key, 0) != 0)
        throw ValidationError(where(source, n_line) + "expected header 'area_count=L'");
      n_areas = parse_int(trim(t.substr(key.size())), where(source, n_line), "area count");
      if (n_areas < 1) throw ValidationError(where(source, n_line) + "area_count must be >= 1");
      continue;
    }
    const auto f = split_csv_line(t);
    if (f.size() != 2) throw ValidationError(where(source, n_line) + "expected 'i,j'");
    const auto ctx = where(source, n_line);
    edges.push_back({static_cast<std::int32_t>(parse_int(f[0], ctx, "area index")),
                     static_cast<std::int32_t>(parse_int(f[1], ctx, "area index"))});
  }
  if (n_areas < 0) throw ValidationError(source + ": missing 'area_count=L' header");
  return build_graph(std::move(edges), static_cast<std::int32_t>(n_areas));
}

AreaGraph read_edge_list_file(const std::string& path) {
  auto in = open_in(path);
  return read_edge_list(in, path);
}

void write_edge_list(std::ostream& out, const AreaGraph& graph) {
  out << "area_count=" << graph.n_areas() << '\n';
  for (const auto& e : graph.edges()) out << e.i << ',' << e.j << '\n';
}

// ---------------------------------------------------------------------------
// Counts

CountData read_counts(std::istream& in, const std::string& source) {
  std::string line;
  std::int64_t n_line = 0;
  CountData data;
  std::map<std::string, std::size_t> col;
  struct Row {
    std::int64_t week, count, line;
    int in_sample;
  };
  std::unordered_map<std::string, std::int32_t> area_index;
  std::vector<std::vector<Row>> rows;
  std::vector<double> population;
  std::vector<std::int64_t> pop_line;
  while (std::getline(in, line)) {
    ++n_line;
    if (skippable(line)) {
      ++data.ignored_lines;
      continue;
    }
    if (col.empty()) {
      col = header_index(line, {"area_id", "week_index", "count", "population"}, {"in_sample"},
                         source);
      continue;
    }
    const auto f = split_csv_line(line);
    const auto ctx = where(source, n_line);
    if (f.size() != col.size())
      throw ValidationError(ctx + "expected " + std::to_string(col.size()) + " fields, found " +
                            std::to_string(f.size()));
    const auto& id = f[col["area_id"]];
    if (id.empty()) throw ValidationError(ctx + "empty area_id");
    auto [it, fresh] = area_index.emplace(id, static_cast<std::int32_t>(data.area_ids.size()));
    const double pop = parse_double(f[col["population"]], ctx, "population");
    if (!(pop > 0.0)) throw ValidationError(ctx + "population must be positive");
    if (fresh) {
      data.area_ids.push_back(id);
      rows.emplace_back();
      population.push_back(pop);
      pop_line.push_back(n_line);
    } else if (population[it->second] != pop) {
      throw ValidationError(ctx + "population " + f[col["population"]] + " for area '" + id +
                            "' differs from " + std::to_string(population[it->second]) +
                            " on line " + std::to_string(pop_line[it->second]));
    }
    Row r;
    r.week = parse_int(f[col["week_index"]], ctx, "week_index");
    r.count = parse_int(f[col["count"]], ctx, "count");
    if (r.count < 0) throw ValidationError(ctx + "negative count");
    r.line = n_line;
    r.in_sample = col.count("in_sample") ? (parse_bool(f[col["in_sample"]], ctx, "in_sample") ? 1 : 0) : 1;
    rows[it->second].push_back(r);
  }
  if (col.empty()) throw ValidationError(source + ": empty file");
  if (data.area_ids.empty()) throw ValidationError(source + ": no data rows");

  std::int64_t max_week = -1, min_week = 0;
  for (const auto& area : rows)
    for (const auto& r : area) {
      max_week = std::max(max_week, r.week);
      min_week = std::min(min_week, r.week);
    }
  if (max_week < 0) throw ValidationError(source + ": no rows with week_index >= 0");
  const auto n_areas = static_cast<std::int32_t>(rows.size());
  const auto n_times = static_cast<std::int32_t>(max_week + 1);
  const auto n_pre = static_cast<std::int32_t>(-min_week);
  CountMatrix counts = CountMatrix::Constant(n_areas, n_times, -1);
  CountMatrix pre = CountMatrix::Constant(n_areas, n_pre, -1);
  MaskMatrix mask = MaskMatrix::Constant(n_areas, n_times, true);
  for (std::int32_t l = 0; l < n_areas; ++l) {
    for (const auto& r : rows[l]) {
      std::int64_t& slot = r.week >= 0 ? counts(l, r.week) : pre(l, -r.week - 1);
      if (slot >= 0)
        throw ValidationError(where(source, r.line) + "duplicate row for area '" +
                              data.area_ids[l] + "', week " + std::to_string(r.week));
      slot = r.count;
      if (r.week >= 0) mask(l, r.week) = r.in_sample != 0;
    }
    for (std::int32_t t = 0; t < n_times; ++t)
      if (counts(l, t) < 0)
        throw ValidationError(source + ": missing cell for area '" + data.area_ids[l] +
                              "', week " + std::to_string(t));
    for (std::int32_t p = 0; p < n_pre; ++p)
      if (pre(l, p) < 0)
        throw ValidationError(source + ": missing pre-period cell for area '" + data.area_ids[l] +
                              "', week " + std::to_string(-p - 1));
  }
  data.panel = CountPanel::make(std::move(counts), std::move(pre),
                                Eigen::Map<Eigen::VectorXd>(population.data(), n_areas));
  data.panel.in_sample = std::move(mask);
  return data;
}

CountData read_counts_file(const std::string& path) {
  auto in = open_in(path);
  return read_counts(in, path);
}

void write_counts(std::ostream& out, const CountPanel& panel,
                  const std::vector<std::string>& area_ids) {
  out << "area_id,week_index,count,population,in_sample\n";
  char buf[64];
  for (std::int32_t l = 0; l < panel.n_areas(); ++l) {
    std::snprintf(buf, sizeof buf, "%.17g", panel.population[l]);
    for (std::int32_t p = panel.n_pre() - 1; p >= 0; --p)
      out << area_ids[l] << ',' << -(p + 1) << ',' << panel.pre_counts(l, p) << ',' << buf
          << ",1\n";
    for (std::int32_t t = 0; t < panel.n_times(); ++t)
      out << area_ids[l] << ',' << t << ',' << panel.counts(l, t) << ',' << buf << ','
          << (panel.in_sample(l, t) ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Covariates

DesignMatrices read_covariates(std::istream& in, const std::vector<std::string>& area_ids,
                               std::int32_t n_times, const CovariateBindings& bindings,
                               const std::string& source, std::int64_t* ignored_lines) {
  const auto n_areas = static_cast<std::int32_t>(area_ids.size());
  const auto n = n_areas * n_times;
  std::unordered_map<std::string, std::int32_t> area_index;
  for (std::int32_t l = 0; l < n_areas; ++l) area_index.emplace(area_ids[l], l);

  std::map<std::string, Eigen::VectorXd> values;
  std::map<std::string, std::vector<std::int64_t>> seen_line;
  std::string line;
  std::int64_t n_line = 0, ignored = 0;
  std::map<std::string, std::size_t> col;
  while (std::getline(in, line)) {
    ++n_line;
    if (skippable(line)) {
      ++ignored;
      continue;
    }
    if (col.empty()) {
      col = header_index(line, {"area_id", "name", "value"}, {"week_index"}, source);
      continue;
    }
    const auto f = split_csv_line(line);
    const auto ctx = where(source, n_line);
    if (f.size() != col.size())
      throw ValidationError(ctx + "expected " + std::to_string(col.size()) + " fields");
    const auto a = area_index.find(f[col["area_id"]]);
    if (a == area_index.end())
      throw ValidationError(ctx + "area '" + f[col["area_id"]] + "' is not in the count panel");
    const auto& name = f[col["name"]];
    if (name.empty()) throw ValidationError(ctx + "empty covariate name");
    const double v = parse_double(f[col["value"]], ctx, "value");
    auto& vec = values.try_emplace(name, Eigen::VectorXd::Constant(n, std::nan(""))).first->second;
    auto& lines = seen_line.try_emplace(name, std::vector<std::int64_t>(n, 0)).first->second;
    const std::string week = col.count("week_index") ? f[col["week_index"]] : std::string();
    std::int64_t lo = 0, hi = n_times;
    if (!week.empty()) {
      lo = parse_int(week, ctx, "week_index");
      if (lo < 0) {  // pre-period covariates are not used
        ++ignored;
        continue;
      }
      if (lo >= n_times)
        throw ValidationError(ctx + "week " + week + " is beyond the count panel");
      hi = lo + 1;
    }
    for (auto t = lo; t < hi; ++t) {
      const auto c = a->second + n_areas * t;
      if (lines[c])
        throw ValidationError(ctx + "covariate '" + name + "' already set for area '" +
                              area_ids[a->second] + "', week " + std::to_string(t) + " on line " +
                              std::to_string(lines[c]));
      vec[c] = v;
      lines[c] = n_line;
    }
  }
  if (ignored_lines) *ignored_lines = ignored;

  auto assemble = [&](const std::vector<std::string>& names, Eigen::MatrixXd& m,
                      std::vector<std::string>& out_names) {
    m.resize(n, 1 + static_cast<Eigen::Index>(names.size()));
    m.col(0).setOnes();
    out_names = {"intercept"};
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto it = values.find(names[k]);
      if (it == values.end())
        throw ValidationError(source + ": bound covariate '" + names[k] + "' not found");
      for (Eigen::Index c = 0; c < n; ++c)
        if (std::isnan(it->second[c]))
          throw ValidationError(source + ": covariate '" + names[k] + "' missing for area '" +
                                area_ids[c % n_areas] + "', week " + std::to_string(c / n_areas));
      m.col(1 + k) = it->second;
      if (bindings.per_area.count(names[k]) && bindings.global.count(names[k]))
        throw ValidationError("covariate '" + names[k] + "' cannot be standardized both ways");
      if (bindings.per_area.count(names[k]))
        standardize_column(m.col(1 + k), n_areas, true, names[k]);
      else if (bindings.global.count(names[k]))
        standardize_column(m.col(1 + k), n_areas, false, names[k]);
      out_names.push_back(names[k]);
    }
  };
  DesignMatrices d;
  assemble(bindings.growth, d.x, d.x_names);
  assemble(bindings.baseline, d.v, d.v_names);
  for (const auto& s : {bindings.per_area, bindings.global})
    for (const auto& name : s)
      if (std::find(bindings.growth.begin(), bindings.growth.end(), name) == bindings.growth.end() &&
          std::find(bindings.baseline.begin(), bindings.baseline.end(), name) ==
              bindings.baseline.end())
        throw ValidationError("standardization target '" + name + "' is not a bound covariate");
  return d;
}

DesignMatrices read_covariates_file(const std::string& path,
                                    const std::vector<std::string>& area_ids,
                                    std::int32_t n_times, const CovariateBindings& bindings,
                                    std::int64_t* ignored_lines) {
  auto in = open_in(path);
  return read_covariates(in, area_ids, n_times, bindings, path, ignored_lines);
}

void write_covariates(std::ostream& out, const DesignMatrices& designs,
                      const std::vector<std::string>& area_ids, std::int32_t n_areas) {
  out << "area_id,week_index,name,value\n";
  char buf[64];
  auto dump = [&](const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
    for (Eigen::Index k = 1; k < m.cols(); ++k)
      for (Eigen::Index c = 0; c < m.rows(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", m(c, k));
        out << area_ids[c % n_areas] << ',' << c / n_areas << ',' << names[k] << ',' << buf
            << '\n';
      }
  };
  dump(designs.x, designs.x_names);
  dump(designs.v, designs.v_names);
}

// ---------------------------------------------------------------------------
// Config file

namespace {

struct KeyDoc {
  const char* section;
  const char* key;
  const char* doc;
};

constexpr KeyDoc kKeys[] = {
    {"model", "variant", "a|b|c|d|e (default d)"},
    {"model", "tau", "number of lags (default 3)"},
    {"model", "immunity_window", "weeks summed in the depletion factor (default: all history)"},
    {"model", "depletion", "susceptible|literal (default susceptible)"},
    {"model", "depletion_floor", "lower clamp of the susceptible fraction (default 1e-6)"},
    {"model", "field_coordinates",
     "whitened|innovations: sampler coordinates for the random-effect fields (default whitened)"},
    {"model", "sum_to_zero_variance", "variance of the soft sum-to-zero density (default 0.001 n^2)"},
    {"priors", "beta0_mean", "intercept prior mean (default -0.5)"},
    {"priors", "beta0_sd", "intercept prior sd (default 1)"},
    {"priors", "beta_mean", "growth coefficient prior mean (default 0)"},
    {"priors", "beta_sd", "growth coefficient prior sd (default 1)"},
    {"priors", "eta_mean", "baseline coefficient prior mean (default 0)"},
    {"priors", "eta_sd", "baseline coefficient prior sd (default 1)"},
    {"priors", "sigma_phi_scale", "half-normal scale of sigma_phi (default 0.1)"},
    {"priors", "sigma_psi_scale", "half-normal scale of sigma_psi (default 0.1)"},
    {"priors", "dirichlet_concentration", "lag-weight Dirichlet concentration (default 1)"},
    {"sampler", "chains", "number of chains (default 4)"},
    {"sampler", "warmup", "warmup iterations per chain (default 1000)"},
    {"sampler", "iter", "post-warmup iterations per chain (default 1000)"},
    {"sampler", "thin", "keep every thin-th draw (default 1)"},
    {"sampler", "target_accept", "dual-averaging target (default 0.8)"},
    {"sampler", "max_treedepth", "maximum tree depth (default 10)"},
    {"sampler", "seed", "master seed (default 1)"},
    {"sampler", "rhat_threshold", "convergence pass line (default 1.05)"},
    {"covariates", "growth", "comma-separated covariate names for the growth rate"},
    {"covariates", "baseline", "comma-separated covariate names for the baseline"},
    {"covariates", "standardize_per_area", "names standardized within each area"},
    {"covariates", "standardize_global", "names standardized over all cells"},
    {"simulate", "lattice_rows", "lattice rows (default 5)"},
    {"simulate", "lattice_cols", "lattice columns (default 5)"},
    {"simulate", "weeks", "panel length T (default 30)"},
    {"simulate", "replicates", "number of replicates B (default 20)"},
    {"simulate", "holdout", "held-out fraction (default 0.2)"},
    {"simulate", "seed", "simulation seed (default 1)"},
    {"simulate", "true_sigma_phi_scale", "half-normal scale of the true sigma_phi (default 0.1)"},
    {"simulate", "true_sigma_psi_scale", "half-normal scale of the true sigma_psi (default 0.5)"},
    {"simulate", "area_covariates", "number of area-level covariates (default 3)"},
    {"simulate", "tier_block_weeks", "weeks per tier block (default 5)"},
    {"simulate", "summer_start", "first week of the summer window (default 2)"},
    {"simulate", "summer_end", "week after the summer window (default 9)"},
    {"simulate", "christmas_start", "first week of the christmas window (default 24)"},
    {"simulate", "christmas_end", "week after the christmas window (default 27)"},
    {"simulate", "population_min", "smallest area population (default 100000)"},
    {"simulate", "population_max", "largest area population (default 300000)"},
    {"simulate", "pre_rate_per_10k", "pre-period Poisson rate per 10,000 (default 5)"},
    {"simulate", "max_rate_per_10k", "redraw trajectories above this weekly rate (default 150)"},
    {"simulate", "max_redraws", "redraw limit per replicate (default 200)"},
};

}  // namespace

std::string config_keys_help() {
  std::ostringstream os;
  const char* section = "";
  for (const auto& k : kKeys) {
    if (std::string(section) != k.section) {
      section = k.section;
      os << "[" << section << "]\n";
    }
    os << "  " << k.key << " = " << k.doc << "\n";
  }
  return os.str();
}

void apply_config(std::istream& in, RunSettings& s, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ValidationError(source + ": key '" + section + "' must be inside a [section]");
    for (const auto& [key, node] : body) {
      const std::string value = trim(node.data());
      const std::string ctx = source + ": [" + section + "] " + key + ": ";
      const bool known = std::any_of(std::begin(kKeys), std::end(kKeys), [&](const KeyDoc& k) {
        return section == k.section && key == k.key;
      });
      if (!known) throw ValidationError(source + ": unknown key '" + key + "' in [" + section + "]");
      auto i = [&] { return static_cast<std::int32_t>(parse_int(value, ctx, "integer")); };
      auto d = [&] { return parse_double(value, ctx, "number"); };
      auto& m = s.model;
      auto& p = s.model.priors;
      auto& n = s.nuts;
      auto& sim = s.sim;
      if (section == "model") {
        if (key == "variant") m.variant = parse_variant(value);
        else if (key == "tau") m.tau = i();
        else if (key == "immunity_window") m.immunity_window = i();
        else if (key == "depletion") m.depletion = parse_depletion(value);
        else if (key == "depletion_floor") m.depletion_floor = d();
        else if (key == "field_coordinates") m.field_coordinates = parse_field_coordinates(value);
        else if (key == "sum_to_zero_variance") m.sum_to_zero_variance = d();
      } else if (section == "priors") {
        if (key == "beta0_mean") p.beta0_mean = d();
        else if (key == "beta0_sd") p.beta0_sd = d();
        else if (key == "beta_mean") p.beta_mean = d();
        else if (key == "beta_sd") p.beta_sd = d();
        else if (key == "eta_mean") p.eta_mean = d();
        else if (key == "eta_sd") p.eta_sd = d();
        else if (key == "sigma_phi_scale") p.sigma_phi_scale = d();
        else if (key == "sigma_psi_scale") p.sigma_psi_scale = d();
        else if (key == "dirichlet_concentration") p.dirichlet_concentration = d();
      } else if (section == "sampler") {
        if (key == "chains") n.n_chains = i();
        else if (key == "warmup") n.n_warmup = i();
        else if (key == "iter") n.n_iter = i();
        else if (key == "thin") n.thin = i();
        else if (key == "target_accept") n.target_accept = d();
        else if (key == "max_treedepth") n.max_treedepth = i();
        else if (key == "seed") n.seed = static_cast<std::uint64_t>(parse_int(value, ctx, "seed"));
        else if (key == "rhat_threshold") s.rhat_threshold = d();
      } else if (section == "covariates") {
        const auto list = split_list(value);
        if (key == "growth") s.bindings.growth = list;
        else if (key == "baseline") s.bindings.baseline = list;
        else if (key == "standardize_per_area") s.bindings.per_area = {list.begin(), list.end()};
        else if (key == "standardize_global") s.bindings.global = {list.begin(), list.end()};
      } else if (section == "simulate") {
        if (key == "lattice_rows") sim.lattice_rows = i();
        else if (key == "lattice_cols") sim.lattice_cols = i();
        else if (key == "weeks") sim.n_times = i();
        else if (key == "replicates") sim.replicates = i();
        else if (key == "holdout") sim.holdout = d();
        else if (key == "seed") sim.seed = static_cast<std::uint64_t>(parse_int(value, ctx, "seed"));
        else if (key == "true_sigma_phi_scale") sim.true_sigma_phi_scale = d();
        else if (key == "true_sigma_psi_scale") sim.true_sigma_psi_scale = d();
        else if (key == "area_covariates") sim.n_area_covariates = i();
        else if (key == "tier_block_weeks") sim.tier_block_weeks = i();
        else if (key == "summer_start") sim.summer.start = i();
        else if (key == "summer_end") sim.summer.end = i();
        else if (key == "christmas_start") sim.christmas.start = i();
        else if (key == "christmas_end") sim.christmas.end = i();
        else if (key == "population_min") sim.population_min = d();
        else if (key == "population_max") sim.population_max = d();
        else if (key == "pre_rate_per_10k") sim.pre_rate_per_10k = d();
        else if (key == "max_rate_per_10k") sim.max_rate_per_10k = d();
        else if (key == "max_redraws") sim.max_redraws = i();
      }
    }
  }
}

void apply_config_file(const std::string& path, RunSettings& settings) {
  auto in = open_in(path);
  apply_config(in, settings, path);
}

// ---------------------------------------------------------------------------
// Matrices

void write_matrix_csv(std::ostream& out, const std::vector<std::string>& names,
                      const Eigen::MatrixXd& m) {
  if (static_cast<Eigen::Index>(names.size()) != m.cols())
    throw ValidationError("column name count does not match the matrix");
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

void read_matrix_csv(std::istream& in, std::vector<std::string>& names, Eigen::MatrixXd& m,
                     const std::string& source) {
  std::string line;
  std::int64_t n_line = 0;
  names.clear();
  std::vector<double> values;
  std::int64_t rows = 0;
  while (std::getline(in, line)) {
    ++n_line;
    if (names.empty()) {
      // Names may contain commas inside brackets, e.g. phi[0,1].
      std::string cur;
      int depth = 0;
      for (char c : line) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
          names.push_back(trim(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
      names.push_back(trim(cur));
      continue;
    }
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != names.size())
      throw ValidationError(where(source, n_line) + "expected " + std::to_string(names.size()) +
                            " fields, found " + std::to_string(f.size()));
    for (const auto& v : f) values.push_back(parse_double(v, where(source, n_line), "value"));
    ++rows;
  }
  if (names.empty()) throw ValidationError(source + ": empty file");
  m = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, static_cast<Eigen::Index>(names.size()));
}

void write_id_map(std::ostream& out, const std::vector<std::string>& area_ids) {
  out << "index,area_id\n";
  for (std::size_t i = 0; i < area_ids.size(); ++i) out << i << ',' << area_ids[i] << '\n';
}

}  // namespace poiar
