#include "psfa/similarity.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "psfa/errors.hpp"
#include "psfa/io.hpp"

namespace psfa {

namespace {

std::uint64_t pair_key(Index i, Index j)
{
    return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
}

} // namespace

SimilarityGraph::SimilarityGraph(Index num_nodes, std::vector<Edge> edges)
    : num_nodes_(num_nodes), edges_(std::move(edges))
{
    if (num_nodes < 0 || num_nodes > (Index{1} << 32))
        throw GraphError("invalid node count " + std::to_string(num_nodes));
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(edges_.size());
    for (const auto& e : edges_) {
        if (e.i < 0 || e.j < 0 || e.i >= num_nodes || e.j >= num_nodes)
            throw GraphError("edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ") out of range for " +
                             std::to_string(num_nodes) + " nodes");
        if (e.i == e.j)
            throw GraphError("self-loop at node " + std::to_string(e.i));
        if (!(e.weight >= 0.0))
            throw GraphError("negative or non-finite edge weight");
        if (!seen.insert(pair_key(e.i, e.j)).second)
            throw GraphError("duplicate edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
    }
}

std::vector<std::vector<Index>> SimilarityGraph::adjacency() const
{
    std::vector<std::vector<Index>> adj(static_cast<std::size_t>(num_nodes_));
    for (const auto& e : edges_) {
        adj[static_cast<std::size_t>(e.i)].push_back(e.j);
        adj[static_cast<std::size_t>(e.j)].push_back(e.i);
    }
    for (auto& list : adj) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    return adj;
}

SimilarityGraph SimilarityGraph::induced(const std::vector<Index>& nodes) const
{
    std::unordered_map<Index, Index> local;
    local.reserve(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] < 0 || nodes[k] >= num_nodes_)
            throw GraphError("induced: node " + std::to_string(nodes[k]) + " out of range");
        if (!local.emplace(nodes[k], static_cast<Index>(k)).second)
            throw GraphError("induced: node " + std::to_string(nodes[k]) + " listed twice");
    }
    std::vector<Edge> kept;
    for (const auto& e : edges_) {
        const auto a = local.find(e.i);
        const auto b = local.find(e.j);
        if (a != local.end() && b != local.end())
            kept.push_back({a->second, b->second, e.weight});
    }
    return SimilarityGraph(static_cast<Index>(nodes.size()), std::move(kept));
}

SimilarityGraph temporal_chain(Index n)
{
    if (n < 2)
        throw DimensionError("temporal_chain: need at least two samples");
    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(n - 1));
    for (Index t = 0; t + 1 < n; ++t)
        edges.push_back({t + 1, t, 1.0});
    return SimilarityGraph(n, std::move(edges));
}

SimilarityGraph grid_graph(Index azimuths, Index elevations, Index lightings, bool wrap_azimuth, bool across_lighting)
{
    if (azimuths < 1 || elevations < 1 || lightings < 1)
        throw DimensionError("grid_graph: all lattice counts must be at least 1");

    // Configuration steps (a, e) -> (a', e') each listed once.
    std::vector<std::pair<std::pair<Index, Index>, std::pair<Index, Index>>> steps;
    for (Index a = 0; a < azimuths; ++a) {
        for (Index e = 0; e < elevations; ++e) {
            const bool last_az = a + 1 == azimuths;
            // A two-element ring would list the same neighbor twice.
            if (!last_az || (wrap_azimuth && azimuths > 2))
                steps.push_back({{a, e}, {(a + 1) % azimuths, e}});
            if (e + 1 < elevations)
                steps.push_back({{a, e}, {a, e + 1}});
        }
    }

    std::vector<Edge> edges;
    for (const auto& [from, to] : steps) {
        for (Index l = 0; l < lightings; ++l) {
            if (!across_lighting) {
                edges.push_back({grid_index(from.first, from.second, l, elevations, lightings),
                                 grid_index(to.first, to.second, l, elevations, lightings), 1.0});
                continue;
            }
            for (Index m = 0; m < lightings; ++m)
                edges.push_back({grid_index(from.first, from.second, l, elevations, lightings),
                                 grid_index(to.first, to.second, m, elevations, lightings), 1.0});
        }
    }
    return SimilarityGraph(azimuths * elevations * lightings, std::move(edges));
}

namespace {

void require_graph_matches(const Matrix& y, const SimilarityGraph& graph)
{
    if (graph.num_nodes() != y.cols())
        throw GraphError("similarity graph has " + std::to_string(graph.num_nodes()) + " nodes but the batch has " +
                         std::to_string(y.cols()) + " samples");
    if (y.cols() == 0)
        throw GraphError("empty batch");
}

} // namespace

double slowness_loss(const Matrix& y, const SimilarityGraph& graph)
{
    require_graph_matches(y, graph);
    double total = 0.0;
    for (const auto& e : graph.edges())
        total += e.weight * (y.col(e.i) - y.col(e.j)).squaredNorm();
    return total / static_cast<double>(y.cols());
}

Matrix loss_gradient(const Matrix& y, const SimilarityGraph& graph)
{
    require_graph_matches(y, graph);
    Matrix g = Matrix::Zero(y.rows(), y.cols());
    const double scale = 2.0 / static_cast<double>(y.cols());
    for (const auto& e : graph.edges()) {
        const Vector diff = (scale * e.weight) * (y.col(e.i) - y.col(e.j));
        g.col(e.i) += diff;
        g.col(e.j) -= diff;
    }
    return g;
}

LossFn make_slowness_loss(const SimilarityGraph& graph)
{
    return [graph](const Matrix& y, Matrix* grad) {
        if (grad)
            *grad = loss_gradient(y, graph);
        return slowness_loss(y, graph);
    };
}

EdgeBatch sample_edge_batch(const SimilarityGraph& graph, std::size_t num_edges, std::mt19937_64& rng)
{
    const auto& edges = graph.edges();
    std::vector<std::size_t> order(edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(num_edges, edges.size());
    // Partial Fisher-Yates: the first `take` slots become a uniform sample without replacement.
    for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
    }
    order.resize(take);
    std::sort(order.begin(), order.end());

    EdgeBatch batch;
    for (auto k : order) {
        batch.nodes.push_back(edges[k].i);
        batch.nodes.push_back(edges[k].j);
    }
    std::sort(batch.nodes.begin(), batch.nodes.end());
    batch.nodes.erase(std::unique(batch.nodes.begin(), batch.nodes.end()), batch.nodes.end());

    std::unordered_map<Index, Index> local;
    for (std::size_t k = 0; k < batch.nodes.size(); ++k)
        local.emplace(batch.nodes[k], static_cast<Index>(k));
    std::vector<Edge> local_edges;
    local_edges.reserve(take);
    for (auto k : order)
        local_edges.push_back({local.at(edges[k].i), local.at(edges[k].j), edges[k].weight});
    batch.graph = SimilarityGraph(static_cast<Index>(batch.nodes.size()), std::move(local_edges));
    return batch;
}

void write_graph(std::ostream& out, const SimilarityGraph& graph)
{
    out << "nodes=" << graph.num_nodes() << '\n';
    for (const auto& e : graph.edges())
        out << e.i << ' ' << e.j << ' ' << format_double(e.weight) << '\n';
}

SimilarityGraph read_graph(std::istream& in)
{
    LineReader reader(in);
    std::string line;
    if (!reader.next(line) || line.rfind("nodes=", 0) != 0)
        throw ParseError("expected 'nodes=N' header", reader.line_number());
    Index nodes = 0;
    try {
        std::size_t used = 0;
        nodes = std::stol(line.substr(6), &used);
        if (used != line.size() - 6)
            throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw ParseError("bad node count in header", reader.line_number());
    }
    std::vector<Edge> edges;
    while (reader.next(line)) {
        std::istringstream row(line);
        std::string a, b, w, extra;
        if (!(row >> a >> b >> w) || (row >> extra))
            throw ParseError("expected 'i j s_ij'", reader.line_number());
        Edge e;
        try {
            std::size_t ua = 0, ub = 0;
            e.i = std::stol(a, &ua);
            e.j = std::stol(b, &ub);
            if (ua != a.size() || ub != b.size())
                throw std::invalid_argument("index");
        } catch (const std::exception&) {
            throw ParseError("bad node index", reader.line_number());
        }
        e.weight = parse_double(w, reader.line_number());
        edges.push_back(e);
    }
    try {
        return SimilarityGraph(nodes, std::move(edges));
    } catch (const GraphError& err) {
        throw ParseError(err.what(), reader.line_number());
    }
}

void save_graph(const std::string& path, const SimilarityGraph& graph)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    write_graph(out, graph);
    if (!out)
        throw IoError("failed writing '" + path + "'");
}

SimilarityGraph load_graph(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    return read_graph(in);
}

} // namespace psfa
