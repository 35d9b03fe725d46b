#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/cellgraph.hpp"
#include "histofuse/nn.hpp"

namespace histofuse {

// Model-side view of a graph: dense node features plus weighted undirected edges.
struct GraphData {
    std::size_t nodes = 0;
    std::size_t features = 0;
    std::vector<double> x;    // nodes × features, row-major
    std::vector<Edge> edges;  // i < j, weight > 0

    void validate() const;
};

GraphData to_graph_data(const CellGraph& graph);

// Disjoint union of several graphs.
struct GraphBatch {
    Tensor x;                           // [total_nodes, features]
    CsrMatrix adjacency;                // symmetric, raw weights, no self-loops
    std::vector<std::size_t> segment;   // owning graph of each node
    std::size_t graphs = 0;
};

GraphBatch make_graph_batch(const std::vector<const GraphData*>& graphs);
GraphBatch make_graph_batch(const GraphData& graph);

// Symmetric CSR adjacency from an edge list.
CsrMatrix adjacency_from_edges(std::size_t nodes, const std::vector<Edge>& edges);
// D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.
CsrMatrix gcn_normalize(const CsrMatrix& adjacency);
// A + self_weight · I
CsrMatrix add_self_loops(const CsrMatrix& adjacency, double self_weight);
// Rows and columns restricted to `kept` (ascending), renumbered 0..k-1.
CsrMatrix induced_subgraph(const CsrMatrix& adjacency, const std::vector<std::size_t>& kept);

// ReLU(Â · H · W + b)
Tensor gcn_conv(const CsrMatrix& adjacency, const Tensor& h, const Linear& layer);

// Two-layer perceptron in → out → out with GeLU in between.
struct GinMlp {
    Linear first;
    Linear second;

    GinMlp() = default;
    GinMlp(std::size_t in, std::size_t out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return second(gelu(first(x))); }
    void collect(const std::string& prefix, ParamList& out) const;
};

// MLP((1 + eps) · h_i + Σ_j w_ij · h_j)
Tensor gin_conv(const CsrMatrix& adjacency, const Tensor& h, const GinMlp& mlp, double eps = 0.0);

struct PoolResult {
    Tensor h;                          // [kept, width], gated by tanh(score)
    CsrMatrix adjacency;               // induced subgraph
    std::vector<std::size_t> segment;  // owning graph of each kept node
    std::vector<std::size_t> kept;     // indices into the input rows, ascending
};

// Per graph, keeps the ceil(ratio · n) nodes with the highest y = H·p/‖p‖.
// Equal scores favour the lower node index.
PoolResult topk_pool(const Tensor& h, const CsrMatrix& adjacency, const std::vector<std::size_t>& segment,
                     std::size_t graphs, const Tensor& p, double ratio);

// Indices of the k largest scores, ties broken by lower index; returned ascending.
std::vector<std::size_t> topk_indices(const std::vector<double>& scores, std::size_t k);

enum class GnnKind { gcn, gin };

GnnKind parse_gnn_kind(std::string_view name);
std::string_view gnn_kind_name(GnnKind kind);

struct GnnConfig {
    GnnKind kind = GnnKind::gcn;
    std::size_t in_features = pathomics::kFeatureCount;
    std::size_t hidden = 128;
    std::size_t out = 16;
    std::size_t layers = 2;
    double pool_ratio = 0.5;
};

// conv → pool → conv → pool → mean readout → alignment linear.
class GnnBranch {
public:
    GnnBranch() = default;
    GnnBranch(const GnnConfig& config, std::mt19937_64& rng);

    const GnnConfig& config() const { return config_; }
    std::size_t out_features() const { return config_.out; }

    // [graphs, out]
    Tensor forward(const GraphBatch& batch) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<Linear>& gcn_layers() { return gcn_; }
    std::vector<GinMlp>& gin_layers() { return gin_; }
    std::vector<Tensor>& pool_vectors() { return pool_; }
    Linear& align() { return align_; }

private:
    GnnConfig config_;
    std::vector<Linear> gcn_;
    std::vector<GinMlp> gin_;
    std::vector<Tensor> pool_;
    Linear align_;
};

// H_G for a single graph: [out]
Tensor graph_embed(const GraphData& graph, const GnnBranch& branch);

}  // namespace histofuse
