#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace poiar {

struct Edge {
  std::int32_t i;
  std::int32_t j;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Binary contiguity structure of L areal units. Edges are stored once with
// i < j, sorted; neighbor lists are kept in compressed form and sorted.
class AreaGraph {
 public:
  AreaGraph() = default;

  std::int32_t n_areas() const { return n_areas_; }
  std::size_t n_edges() const { return edges_.size(); }
  std::span<const Edge> edges() const { return edges_; }
  // Struct-of-arrays view of the edge list for the vector kernels.
  std::span<const std::int32_t> edge_from() const { return from_; }
  std::span<const std::int32_t> edge_to() const { return to_; }

  std::int32_t degree(std::int32_t area) const { return degrees_[area]; }
  std::span<const std::int32_t> degrees() const { return degrees_; }
  std::span<const std::int32_t> neighbors(std::int32_t area) const {
    return {adj_.data() + offsets_[area], adj_.data() + offsets_[area + 1]};
  }
  bool has_edge(std::int32_t a, std::int32_t b) const;

  std::int32_t n_components() const { return n_components_; }

  // Dense W, used by test oracles and the dense reference path.
  Eigen::MatrixXd adjacency_dense() const;

  // Relabels area k as perm[k].
  AreaGraph permuted(std::span<const std::int32_t> perm) const;

  friend AreaGraph build_graph(std::vector<Edge> edges, std::int32_t n_areas);

 private:
  std::int32_t n_areas_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::int32_t> from_, to_;
  std::vector<std::int32_t> degrees_;
  std::vector<std::int32_t> offsets_{0};
  std::vector<std::int32_t> adj_;
  std::int32_t n_components_ = 0;
};

// Validates and canonicalizes an undirected edge list. Throws ValidationError
// naming the offending edge on self-loops, duplicates or out-of-range indices.
AreaGraph build_graph(std::vector<Edge> edges, std::int32_t n_areas);

// Rook-contiguity lattice; area index is r * cols + c.
AreaGraph lattice_graph(std::int32_t rows, std::int32_t cols);

// Eigenvalues of M = W + I − D, ascending. They do not depend on α, so they are
// computed once per graph and reused by every determinant evaluation.
struct EigenSpectrum {
  Eigen::VectorXd lambdas;
  Eigen::MatrixXd vectors;  // orthonormal columns matching lambdas; empty unless requested
};

EigenSpectrum eigen_spectrum(const AreaGraph& graph, bool with_vectors = false);

}  // namespace poiar
