#include "histofuse/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histofuse/errors.hpp"

namespace histofuse {

void GraphData::validate() const {
    if (nodes == 0) throw InputError("graph has no nodes");
    if (features == 0) throw InputError("graph has no node features");
    if (x.size() != nodes * features) throw DimensionError("graph feature matrix size mismatch");
    require_finite(x, "node features");
    for (const Edge& e : edges) {
        if (e.i >= e.j || e.j >= nodes) throw IndexError("graph edge must satisfy i < j < nodes");
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw InputError("graph edge weight must be positive");
    }
}

GraphData to_graph_data(const CellGraph& graph) {
    GraphData g;
    g.nodes = graph.node_count();
    g.features = pathomics::kFeatureCount;
    g.x.reserve(g.nodes * g.features);
    for (const auto& f : graph.features) g.x.insert(g.x.end(), f.begin(), f.end());
    g.edges = graph.edges;
    return g;
}

CsrMatrix adjacency_from_edges(std::size_t nodes, const std::vector<Edge>& edges) {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(nodes);
    for (const Edge& e : edges) {
        if (e.i >= nodes || e.j >= nodes) throw IndexError("edge endpoint out of range");
        rows[e.i].push_back({e.j, e.weight});
        rows[e.j].push_back({e.i, e.weight});
    }
    CsrMatrix a;
    a.rows = a.cols = nodes;
    a.row_ptr.assign(1, 0);
    for (auto& r : rows) {
        std::sort(r.begin(), r.end());
        for (const auto& [c, w] : r) {
            a.col_idx.push_back(c);
            a.values.push_back(w);
        }
        a.row_ptr.push_back(a.col_idx.size());
    }
    return a;
}

CsrMatrix add_self_loops(const CsrMatrix& adjacency, double self_weight) {
    CsrMatrix out;
    out.rows = adjacency.rows;
    out.cols = adjacency.cols;
    out.row_ptr.assign(1, 0);
    for (std::size_t r = 0; r < adjacency.rows; ++r) {
        bool placed = false;
        for (std::size_t k = adjacency.row_ptr[r]; k < adjacency.row_ptr[r + 1]; ++k) {
            const std::size_t c = adjacency.col_idx[k];
            if (!placed && c > r) {
                out.col_idx.push_back(r);
                out.values.push_back(self_weight);
                placed = true;
            }
            if (c == r) {
                out.col_idx.push_back(r);
                out.values.push_back(adjacency.values[k] + self_weight);
                placed = true;
                continue;
            }
            out.col_idx.push_back(c);
            out.values.push_back(adjacency.values[k]);
        }
        if (!placed) {
            out.col_idx.push_back(r);
            out.values.push_back(self_weight);
        }
        out.row_ptr.push_back(out.col_idx.size());
    }
    return out;
}

CsrMatrix gcn_normalize(const CsrMatrix& adjacency) {
    CsrMatrix a = add_self_loops(adjacency, 1.0);
    std::vector<double> inv_sqrt(a.rows);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double deg = 0.0;
        for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) deg += a.values[k];
        inv_sqrt[r] = 1.0 / std::sqrt(deg);
    }
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
            a.values[k] *= inv_sqrt[r] * inv_sqrt[a.col_idx[k]];
        }
    }
    return a;
}

CsrMatrix induced_subgraph(const CsrMatrix& adjacency, const std::vector<std::size_t>& kept) {
    constexpr std::size_t kDropped = static_cast<std::size_t>(-1);
    std::vector<std::size_t> remap(adjacency.rows, kDropped);
    for (std::size_t n = 0; n < kept.size(); ++n) remap[kept[n]] = n;
    CsrMatrix out;
    out.rows = out.cols = kept.size();
    out.row_ptr.assign(1, 0);
    for (std::size_t r : kept) {
        for (std::size_t k = adjacency.row_ptr[r]; k < adjacency.row_ptr[r + 1]; ++k) {
            const std::size_t c = remap[adjacency.col_idx[k]];
            if (c == kDropped) continue;
            out.col_idx.push_back(c);
            out.values.push_back(adjacency.values[k]);
        }
        out.row_ptr.push_back(out.col_idx.size());
    }
    return out;
}

GraphBatch make_graph_batch(const std::vector<const GraphData*>& graphs) {
    if (graphs.empty()) throw ContractError("graph batch is empty");
    const std::size_t features = graphs.front()->features;
    GraphBatch batch;
    batch.graphs = graphs.size();
    std::vector<double> x;
    std::vector<Edge> edges;
    std::size_t offset = 0;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const GraphData& data = *graphs[g];
        data.validate();
        if (data.features != features) throw DimensionError("graphs in a batch must share the feature width");
        x.insert(x.end(), data.x.begin(), data.x.end());
        for (const Edge& e : data.edges) edges.push_back({e.i + offset, e.j + offset, e.weight});
        batch.segment.insert(batch.segment.end(), data.nodes, g);
        offset += data.nodes;
    }
    batch.x = Tensor::from({offset, features}, std::move(x));
    batch.adjacency = adjacency_from_edges(offset, edges);
    return batch;
}

GraphBatch make_graph_batch(const GraphData& graph) { return make_graph_batch(std::vector{&graph}); }

Tensor gcn_conv(const CsrMatrix& adjacency, const Tensor& h, const Linear& layer) {
    if (h.rank() != 2 || h.dim(1) != layer.in_features()) throw DimensionError("gcn_conv: width mismatch");
    return relu(layer(spmm(gcn_normalize(adjacency), h)));
}

GinMlp::GinMlp(std::size_t in, std::size_t out, std::mt19937_64& rng) : first(in, out, rng), second(out, out, rng) {}

void GinMlp::collect(const std::string& prefix, ParamList& out) const {
    first.collect(prefix + ".0", out);
    second.collect(prefix + ".1", out);
}

Tensor gin_conv(const CsrMatrix& adjacency, const Tensor& h, const GinMlp& mlp, double eps) {
    if (h.rank() != 2 || h.dim(1) != mlp.first.in_features()) throw DimensionError("gin_conv: width mismatch");
    return mlp(spmm(add_self_loops(adjacency, 1.0 + eps), h));
}

std::vector<std::size_t> topk_indices(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

PoolResult topk_pool(const Tensor& h, const CsrMatrix& adjacency, const std::vector<std::size_t>& segment,
                     std::size_t graphs, const Tensor& p, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ParameterError("topk ratio must lie in (0, 1]");
    if (h.rank() != 2 || h.dim(0) == 0) throw ContractError("topk_pool: empty graph");
    if (segment.size() != h.dim(0)) throw DimensionError("topk_pool: segment size mismatch");
    if (p.numel() != h.dim(1)) throw DimensionError("topk_pool: score vector width mismatch");

    const Tensor y = matmul(h, reshape(l2_normalize(p), {p.numel(), 1}));
    const auto yv = y.data();

    std::vector<std::vector<std::size_t>> members(graphs);
    for (std::size_t n = 0; n < segment.size(); ++n) members.at(segment[n]).push_back(n);

    PoolResult out;
    for (std::size_t g = 0; g < graphs; ++g) {
        const auto& m = members[g];
        if (m.empty()) throw ContractError("topk_pool: empty graph in batch");
        std::vector<double> s(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) s[i] = yv[m[i]];
        const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(m.size()) - 1e-9));
        for (std::size_t i : topk_indices(s, std::max<std::size_t>(k, 1))) {
            out.kept.push_back(m[i]);
            out.segment.push_back(g);
        }
    }
    // Segments are contiguous in a batch, so `kept` is already ascending.
    out.h = mul_rows(index_rows(h, out.kept), tanh(index_rows(y, out.kept)));
    out.adjacency = induced_subgraph(adjacency, out.kept);
    return out;
}

GnnKind parse_gnn_kind(std::string_view name) {
    if (name == "gcn") return GnnKind::gcn;
    if (name == "gin") return GnnKind::gin;
    throw ParameterError("unknown graph convolution '" + std::string(name) + "' (expected gcn or gin)");
}

std::string_view gnn_kind_name(GnnKind kind) { return kind == GnnKind::gcn ? "gcn" : "gin"; }

GnnBranch::GnnBranch(const GnnConfig& config, std::mt19937_64& rng) : config_(config) {
    if (config.in_features == 0 || config.hidden == 0 || config.out == 0 || config.layers == 0) {
        throw ParameterError("graph branch widths and depth must be positive");
    }
    if (!(config.pool_ratio > 0.0 && config.pool_ratio <= 1.0)) throw ParameterError("topk ratio must lie in (0, 1]");
    std::size_t in = config.in_features;
    for (std::size_t l = 0; l < config.layers; ++l) {
        if (config.kind == GnnKind::gcn) {
            gcn_.emplace_back(in, config.hidden, rng);
        } else {
            gin_.emplace_back(in, config.hidden, rng);
        }
        pool_.push_back(uniform_param({config.hidden}, config.hidden, rng));
        in = config.hidden;
    }
    align_ = Linear(config.hidden, config.out, rng);
}

Tensor GnnBranch::forward(const GraphBatch& batch) const {
    if (batch.x.dim(1) != config_.in_features) {
        throw DimensionError("graph branch expects " + std::to_string(config_.in_features) + " node features, got " +
                             std::to_string(batch.x.dim(1)));
    }
    Tensor h = batch.x;
    CsrMatrix adjacency = batch.adjacency;
    std::vector<std::size_t> segment = batch.segment;
    for (std::size_t l = 0; l < config_.layers; ++l) {
        h = config_.kind == GnnKind::gcn ? gcn_conv(adjacency, h, gcn_[l]) : relu(gin_conv(adjacency, h, gin_[l]));
        PoolResult pooled = topk_pool(h, adjacency, segment, batch.graphs, pool_[l], config_.pool_ratio);
        h = pooled.h;
        adjacency = std::move(pooled.adjacency);
        segment = std::move(pooled.segment);
    }
    return align_(segment_mean(h, segment, batch.graphs));
}

void GnnBranch::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string name = prefix + ".conv" + std::to_string(l);
        if (config_.kind == GnnKind::gcn) {
            gcn_[l].collect(name, out);
        } else {
            gin_[l].collect(name, out);
        }
        out.emplace_back(prefix + ".pool" + std::to_string(l), pool_[l]);
    }
    align_.collect(prefix + ".align", out);
}

Tensor graph_embed(const GraphData& graph, const GnnBranch& branch) {
    const Tensor h = branch.forward(make_graph_batch(graph));
    return reshape(h, {branch.out_features()});
}

}  // namespace histofuse
