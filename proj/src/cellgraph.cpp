#include "histofuse/cellgraph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "histofuse/errors.hpp"
#include "histofuse/textio.hpp"

namespace histofuse {

using textio::LineReader;

double edge_weight(Point a, Point b, double critical_distance) {
    if (!(critical_distance > 0.0)) throw ParameterError("critical distance must be positive");
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d == 0.0) throw InputError("coincident centroids have no defined edge weight");
    return d <= critical_distance ? critical_distance / d : 0.0;
}

std::vector<Edge> connect_centroids(const std::vector<Point>& centroids, double critical_distance) {
    if (!(critical_distance > 0.0)) throw ParameterError("critical distance must be positive");
    auto cell_of = [critical_distance](double v) { return static_cast<long long>(std::floor(v / critical_distance)); };
    auto key = [](long long cx, long long cy) { return (cx * 73856093LL) ^ (cy * 19349663LL); };
    std::unordered_map<long long, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        buckets[key(cell_of(centroids[i].x), cell_of(centroids[i].y))].push_back(i);
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        const long long cx = cell_of(centroids[i].x);
        const long long cy = cell_of(centroids[i].y);
        for (long long dx = -1; dx <= 1; ++dx) {
            for (long long dy = -1; dy <= 1; ++dy) {
                auto it = buckets.find(key(cx + dx, cy + dy));
                if (it == buckets.end()) continue;
                for (std::size_t j : it->second) {
                    // Hash collisions can put a far cell in the bucket; the distance test filters it.
                    if (j <= i) continue;
                    if (cell_of(centroids[j].x) != cx + dx || cell_of(centroids[j].y) != cy + dy) continue;
                    const double w = edge_weight(centroids[i], centroids[j], critical_distance);
                    if (w > 0.0) edges.push_back({i, j, w});
                }
            }
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    return edges;
}

namespace {

bool valid_id(const std::string& id) {
    return !id.empty() && id.find_first_of(" \t\r\n") == std::string::npos;
}

}  // namespace

void validate(const PatchBundle& bundle) {
    if (!valid_id(bundle.patch_id)) throw InputError("patch id must be a non-empty token");
    if (!valid_id(bundle.patient_id)) throw InputError("patient id must be a non-empty token");
    if (bundle.label != 0 && bundle.label != 1) throw InputError("patch label must be 0 or 1");
    if (bundle.height == 0 || bundle.width == 0) throw InputError("patch grid must be at least 1x1");
    if (bundle.gray.size() != bundle.height * bundle.width) throw InputError("patch grid size mismatch");
    for (int v : bundle.gray) {
        if (v < 0 || v > 255) throw InputError("gray value outside [0, 255]");
    }
    for (std::size_t k = 0; k < bundle.nuclei.size(); ++k) {
        const NucleusRecord& n = bundle.nuclei[k];
        if (!std::isfinite(n.centroid.x) || !std::isfinite(n.centroid.y)) {
            throw InputError("nucleus " + std::to_string(k) + " has a non-finite centroid");
        }
        if (n.pixels.empty()) throw InputError("nucleus " + std::to_string(k) + " has an empty mask");
        for (const auto& p : n.pixels) {
            if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= bundle.height ||
                static_cast<std::size_t>(p.col) >= bundle.width) {
                throw InputError("nucleus " + std::to_string(k) + " mask pixel outside the patch grid");
            }
        }
    }
}

CellGraph build_graph(const PatchBundle& bundle, double critical_distance, int n_bins, std::size_t* merged) {
    if (!(critical_distance > 0.0)) throw ParameterError("critical distance must be positive");
    validate(bundle);
    if (bundle.nuclei.empty()) throw InputError("patch " + bundle.patch_id + " has no nuclei: empty graph");

    // Fold nuclei with identical centroids into the first one seen.
    std::vector<NucleusRecord> nodes;
    std::map<std::pair<double, double>, std::size_t> seen;
    std::size_t folded = 0;
    for (const NucleusRecord& n : bundle.nuclei) {
        auto [it, inserted] = seen.try_emplace({n.centroid.x, n.centroid.y}, nodes.size());
        if (inserted) {
            nodes.push_back(n);
            continue;
        }
        ++folded;
        auto& pixels = nodes[it->second].pixels;
        for (const auto& p : n.pixels) {
            if (std::find(pixels.begin(), pixels.end(), p) == pixels.end()) pixels.push_back(p);
        }
    }
    if (merged) *merged = folded;

    CellGraph g;
    g.patch_id = bundle.patch_id;
    g.patient_id = bundle.patient_id;
    g.label = bundle.label;
    g.critical_distance = critical_distance;
    for (const NucleusRecord& n : nodes) {
        pathomics::NucleusRegion region;
        region.pixels = n.pixels;
        region.intensities.reserve(n.pixels.size());
        for (const auto& p : n.pixels) region.intensities.push_back(bundle.gray_at(p.row, p.col));
        g.centroids.push_back(n.centroid);
        g.features.push_back(pathomics::extract_node_features(region, n_bins));
    }
    g.edges = connect_centroids(g.centroids, critical_distance);
    return g;
}

std::string serialize_graph(const CellGraph& g) {
    std::string out = "CELLGRAPH v1 " + g.patch_id + " " + g.patient_id + " " + std::to_string(g.label) + " ";
    textio::append_double(out, g.critical_distance);
    out += "\nNODES " + std::to_string(g.node_count()) + " FEATURES " + std::to_string(pathomics::kFeatureCount) +
           "\n";
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        out += std::to_string(n);
        out += ' ';
        textio::append_double(out, g.centroids[n].x);
        out += ' ';
        textio::append_double(out, g.centroids[n].y);
        for (double f : g.features[n]) {
            out += ' ';
            textio::append_double(out, f);
        }
        out += '\n';
    }
    out += "EDGES " + std::to_string(g.edge_count()) + "\n";
    for (const Edge& e : g.edges) {
        out += std::to_string(e.i) + " " + std::to_string(e.j) + " ";
        textio::append_double(out, e.weight);
        out += '\n';
    }
    return out;
}

CellGraph parse_graph(std::string_view text) {
    LineReader reader(text);
    CellGraph g;
    auto header = reader.next("CELLGRAPH header");
    if (header.size() != 6 || header[0] != "CELLGRAPH" || header[1] != "v1") {
        throw ParseError(reader.line(), "expected 'CELLGRAPH v1 <patch_id> <patient_id> <label> <dc>'");
    }
    g.patch_id = std::string(header[2]);
    g.patient_id = std::string(header[3]);
    const long long label = textio::parse_int(header[4], reader.line());
    if (label != 0 && label != 1) throw ParseError(reader.line(), "label must be 0 or 1");
    g.label = static_cast<int>(label);
    g.critical_distance = textio::parse_double(header[5], reader.line());
    if (!(g.critical_distance > 0.0)) throw ParseError(reader.line(), "critical distance must be positive");

    auto nodes = reader.next("NODES line");
    if (nodes.size() != 4 || nodes[0] != "NODES" || nodes[2] != "FEATURES") {
        throw ParseError(reader.line(), "expected 'NODES <N> FEATURES 94'");
    }
    const std::size_t n = textio::parse_count(nodes[1], reader.line());
    if (textio::parse_count(nodes[3], reader.line()) != pathomics::kFeatureCount) {
        throw ParseError(reader.line(), "feature count must be 94");
    }
    if (n == 0) throw ParseError(reader.line(), "graph has no nodes");
    g.centroids.reserve(n);
    g.features.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        auto t = reader.next("node line");
        if (t.size() != 3 + pathomics::kFeatureCount) {
            throw ParseError(reader.line(), "node line needs id, cx, cy and 94 features; got " +
                                                std::to_string(t.size()) + " fields");
        }
        if (textio::parse_count(t[0], reader.line()) != k) {
            throw ParseError(reader.line(), "node ids must be consecutive from 0");
        }
        g.centroids.push_back({textio::parse_double(t[1], reader.line()), textio::parse_double(t[2], reader.line())});
        pathomics::FeatureVector f{};
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = textio::parse_double(t[3 + i], reader.line());
        g.features.push_back(f);
    }

    auto edges = reader.next("EDGES line");
    if (edges.size() != 2 || edges[0] != "EDGES") throw ParseError(reader.line(), "expected 'EDGES <M>'");
    const std::size_t m = textio::parse_count(edges[1], reader.line());
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
    for (std::size_t k = 0; k < m; ++k) {
        auto t = reader.next("edge line");
        if (t.size() != 3) throw ParseError(reader.line(), "edge line must be '<i> <j> <w>'");
        Edge e{textio::parse_count(t[0], reader.line()), textio::parse_count(t[1], reader.line()),
               textio::parse_double(t[2], reader.line())};
        if (e.i >= n || e.j >= n) throw ParseError(reader.line(), "edge endpoint out of range");
        if (e.i == e.j) throw ParseError(reader.line(), "self-loop edge");
        if (e.i > e.j) throw ParseError(reader.line(), "asymmetric edge list: edges must be listed with i < j");
        if (!(e.weight > 0.0)) throw ParseError(reader.line(), "edge weight must be positive");
        if (!seen.emplace(std::make_pair(e.i, e.j), reader.line()).second) {
            throw ParseError(reader.line(), "duplicate edge " + std::to_string(e.i) + "-" + std::to_string(e.j));
        }
        g.edges.push_back(e);
    }
    reader.expect_end();
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    return g;
}

std::string serialize_bundle(const PatchBundle& b) {
    std::string out = "PATCH v1 " + b.patch_id + " " + b.patient_id + " " + std::to_string(b.label) + " " +
                      std::to_string(b.height) + " " + std::to_string(b.width) + "\n";
    for (std::size_t r = 0; r < b.height; ++r) {
        for (std::size_t c = 0; c < b.width; ++c) {
            if (c) out += ' ';
            out += std::to_string(b.gray[r * b.width + c]);
        }
        out += '\n';
    }
    out += "NUCLEI " + std::to_string(b.nuclei.size()) + "\n";
    for (const NucleusRecord& n : b.nuclei) {
        textio::append_double(out, n.centroid.x);
        out += ' ';
        textio::append_double(out, n.centroid.y);
        out += ' ' + std::to_string(n.pixels.size()) + '\n';
        for (const auto& p : n.pixels) out += std::to_string(p.row) + " " + std::to_string(p.col) + "\n";
    }
    return out;
}

PatchBundle parse_bundle(std::string_view text) {
    LineReader reader(text);
    PatchBundle b;
    auto header = reader.next("PATCH header");
    if (header.size() != 7 || header[0] != "PATCH" || header[1] != "v1") {
        throw ParseError(reader.line(), "expected 'PATCH v1 <patch_id> <patient_id> <label> <H> <W>'");
    }
    b.patch_id = std::string(header[2]);
    b.patient_id = std::string(header[3]);
    const long long label = textio::parse_int(header[4], reader.line());
    if (label != 0 && label != 1) throw ParseError(reader.line(), "label must be 0 or 1");
    b.label = static_cast<int>(label);
    b.height = textio::parse_count(header[5], reader.line());
    b.width = textio::parse_count(header[6], reader.line());
    if (b.height == 0 || b.width == 0) throw ParseError(reader.line(), "patch extents must be positive");
    b.gray.reserve(b.height * b.width);
    for (std::size_t r = 0; r < b.height; ++r) {
        auto t = reader.next("gray row");
        if (t.size() != b.width) {
            throw ParseError(reader.line(), "gray row has " + std::to_string(t.size()) + " values, expected " +
                                                std::to_string(b.width));
        }
        for (auto tok : t) {
            const long long v = textio::parse_int(tok, reader.line());
            if (v < 0 || v > 255) throw ParseError(reader.line(), "gray value outside [0, 255]");
            b.gray.push_back(static_cast<int>(v));
        }
    }
    auto nuclei = reader.next("NUCLEI line");
    if (nuclei.size() != 2 || nuclei[0] != "NUCLEI") throw ParseError(reader.line(), "expected 'NUCLEI <K>'");
    const std::size_t k = textio::parse_count(nuclei[1], reader.line());
    for (std::size_t n = 0; n < k; ++n) {
        auto t = reader.next("nucleus header");
        if (t.size() != 3) throw ParseError(reader.line(), "nucleus header must be '<cx> <cy> <P>'");
        NucleusRecord rec;
        rec.centroid = {textio::parse_double(t[0], reader.line()), textio::parse_double(t[1], reader.line())};
        const std::size_t count = textio::parse_count(t[2], reader.line());
        if (count == 0) throw ParseError(reader.line(), "nucleus mask must contain at least one pixel");
        for (std::size_t p = 0; p < count; ++p) {
            auto px = reader.next("mask pixel");
            if (px.size() != 2) throw ParseError(reader.line(), "mask pixel must be '<row> <col>'");
            const long long row = textio::parse_int(px[0], reader.line());
            const long long col = textio::parse_int(px[1], reader.line());
            if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= b.height ||
                static_cast<std::size_t>(col) >= b.width) {
                throw ParseError(reader.line(), "mask pixel outside the patch grid");
            }
            rec.pixels.push_back({static_cast<int>(row), static_cast<int>(col)});
        }
        b.nuclei.push_back(std::move(rec));
    }
    reader.expect_end();
    return b;
}

CellGraph read_graph_file(const std::string& path) { return parse_graph(textio::read_file(path)); }

void write_graph_file(const std::string& path, const CellGraph& graph) {
    textio::write_file(path, serialize_graph(graph));
}

PatchBundle read_bundle_file(const std::string& path) { return parse_bundle(textio::read_file(path)); }

void write_bundle_file(const std::string& path, const PatchBundle& bundle) {
    textio::write_file(path, serialize_bundle(bundle));
}

}  // namespace histofuse
