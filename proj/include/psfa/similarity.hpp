#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "psfa/diff.hpp"
#include "psfa/linalg.hpp"

namespace psfa {

struct Edge {
    Index i = 0;
    Index j = 0;
    double weight = 1.0;
};

/// Directed weighted pair list over sample indices. The loss sums stored edges only.
class SimilarityGraph {
public:
    SimilarityGraph() = default;
    /// Throws GraphError on out-of-range indices, self-loops, negative weights or duplicates.
    SimilarityGraph(Index num_nodes, std::vector<Edge> edges);

    Index num_nodes() const { return num_nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }

    /// Neighbor lists ignoring direction.
    std::vector<std::vector<Index>> adjacency() const;

    /// Graph over `nodes` (renumbered 0..k-1) keeping edges with both ends inside.
    SimilarityGraph induced(const std::vector<Index>& nodes) const;

private:
    Index num_nodes_ = 0;
    std::vector<Edge> edges_;
};

/// Edges (t+1, t) with weight 1 for t = 0..N-2.
SimilarityGraph temporal_chain(Index n);

/// Node index of a lattice configuration.
inline Index grid_index(Index azimuth, Index elevation, Index lighting, Index elevations, Index lightings)
{
    return (azimuth * elevations + elevation) * lightings + lighting;
}

/// Weight-1 edges between configurations one step apart in azimuth (cyclic when wrapping) or in
/// elevation. Without `across_lighting` both ends share a lighting value; with it, every lighting
/// pair of an adjacent (azimuth, elevation) step is connected.
SimilarityGraph grid_graph(Index azimuths, Index elevations, Index lightings, bool wrap_azimuth,
                           bool across_lighting = false);

/// (1/N) sum over stored edges of s_ij |y_i - y_j|^2, N = number of columns of y.
double slowness_loss(const Matrix& y, const SimilarityGraph& graph);

/// dL/dy_i = (2/N) [sum_j s_ij (y_i - y_j) + sum_j s_ji (y_i - y_j)]
Matrix loss_gradient(const Matrix& y, const SimilarityGraph& graph);

/// slowness_loss packaged for the differentiation engine.
LossFn make_slowness_loss(const SimilarityGraph& graph);

/// A mini-batch over a graph: sampled edges, the nodes they touch, and the local graph.
struct EdgeBatch {
    std::vector<Index> nodes; // sorted global indices
    SimilarityGraph graph;    // over positions in `nodes`
};

/// Uniformly samples `num_edges` distinct edges (all of them if fewer exist).
EdgeBatch sample_edge_batch(const SimilarityGraph& graph, std::size_t num_edges, std::mt19937_64& rng);

/// Text format: "nodes=N" header, then one "i j s_ij" line per edge.
void write_graph(std::ostream& out, const SimilarityGraph& graph);
SimilarityGraph read_graph(std::istream& in);
void save_graph(const std::string& path, const SimilarityGraph& graph);
SimilarityGraph load_graph(const std::string& path);

} // namespace psfa
