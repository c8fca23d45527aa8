#include "poiar/graph.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "poiar/error.hpp"
#include "poiar/log.hpp"

namespace poiar {

namespace {

std::string edge_str(const Edge& e) {
  return "(" + std::to_string(e.i) + "," + std::to_string(e.j) + ")";
}

std::int32_t count_components(std::int32_t n, std::span<const std::int32_t> offsets,
                              std::span<const std::int32_t> adj) {
  std::vector<std::int32_t> label(n, -1);
  std::vector<std::int32_t> stack;
  std::int32_t components = 0;
  for (std::int32_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    label[s] = components;
    stack.push_back(s);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto k = offsets[v]; k < offsets[v + 1]; ++k) {
        if (label[adj[k]] < 0) {
          label[adj[k]] = components;
          stack.push_back(adj[k]);
        }
      }
    }
    ++components;
  }
  return components;
}

}  // namespace

AreaGraph build_graph(std::vector<Edge> edges, std::int32_t n_areas) {
  if (n_areas < 1) throw ValidationError("area count must be at least 1");
  for (auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n_areas || e.j >= n_areas)
      throw ValidationError("edge " + edge_str(e) + " has an index outside [0, " +
                            std::to_string(n_areas) + ")");
    if (e.i == e.j) throw ValidationError("edge " + edge_str(e) + " is a self-loop");
    if (e.i > e.j) std::swap(e.i, e.j);
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
  if (auto dup = std::adjacent_find(edges.begin(), edges.end()); dup != edges.end())
    throw ValidationError("edge " + edge_str(*dup) + " is listed more than once");

  AreaGraph g;
  g.n_areas_ = n_areas;
  g.edges_ = std::move(edges);
  g.degrees_.assign(n_areas, 0);
  g.from_.reserve(g.edges_.size());
  g.to_.reserve(g.edges_.size());
  for (const auto& e : g.edges_) {
    ++g.degrees_[e.i];
    ++g.degrees_[e.j];
    g.from_.push_back(e.i);
    g.to_.push_back(e.j);
  }
  g.offsets_.assign(n_areas + 1, 0);
  for (std::int32_t a = 0; a < n_areas; ++a) g.offsets_[a + 1] = g.offsets_[a] + g.degrees_[a];
  g.adj_.assign(g.offsets_.back(), 0);
  std::vector<std::int32_t> fill(g.offsets_.begin(), g.offsets_.end() - 1);
  for (const auto& e : g.edges_) {
    g.adj_[fill[e.i]++] = e.j;
    g.adj_[fill[e.j]++] = e.i;
  }
  for (std::int32_t a = 0; a < n_areas; ++a)
    std::sort(g.adj_.begin() + g.offsets_[a], g.adj_.begin() + g.offsets_[a + 1]);

  g.n_components_ = count_components(n_areas, g.offsets_, g.adj_);
  if (g.n_components_ > 1)
    warn("area graph has " + std::to_string(g.n_components_) +
         " connected components; the Leroux prior stays proper only for alpha < 1");
  return g;
}

bool AreaGraph::has_edge(std::int32_t a, std::int32_t b) const {
  const auto nb = neighbors(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

Eigen::MatrixXd AreaGraph::adjacency_dense() const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_areas_, n_areas_);
  for (const auto& e : edges_) {
    w(e.i, e.j) = 1.0;
    w(e.j, e.i) = 1.0;
  }
  return w;
}

AreaGraph AreaGraph::permuted(std::span<const std::int32_t> perm) const {
  if (static_cast<std::int32_t>(perm.size()) != n_areas_)
    throw ValidationError("permutation length does not match the area count");
  std::vector<Edge> relabeled;
  relabeled.reserve(edges_.size());
  for (const auto& e : edges_) relabeled.push_back({perm[e.i], perm[e.j]});
  return build_graph(std::move(relabeled), n_areas_);
}

AreaGraph lattice_graph(std::int32_t rows, std::int32_t cols) {
  if (rows < 1 || cols < 1)
    throw ValidationError("lattice dimensions must be at least 1x1, got " + std::to_string(rows) +
                          "x" + std::to_string(cols));
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(2 * rows * cols));
  for (std::int32_t r = 0; r < rows; ++r) {
    for (std::int32_t c = 0; c < cols; ++c) {
      const std::int32_t k = r * cols + c;
      if (c + 1 < cols) edges.push_back({k, k + 1});
      if (r + 1 < rows) edges.push_back({k, k + cols});
    }
  }
  return build_graph(std::move(edges), rows * cols);
}

EigenSpectrum eigen_spectrum(const AreaGraph& graph, bool with_vectors) {
  const auto n = graph.n_areas();
  if (n < 1) throw ValidationError("eigen_spectrum needs at least one area");
  Eigen::MatrixXd m = graph.adjacency_dense();
  for (std::int32_t a = 0; a < n; ++a) m(a, a) = 1.0 - graph.degree(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      m, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw NumericError("symmetric eigensolver did not converge for W + I - D");
  if (!with_vectors) return {solver.eigenvalues(), {}};
  return {solver.eigenvalues(), solver.eigenvectors()};
}

}  // namespace poiar
