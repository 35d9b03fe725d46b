#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/pathomics.hpp"

namespace histofuse {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

struct NucleusRecord {
    Point centroid;
    std::vector<pathomics::Pixel> pixels;

    friend bool operator==(const NucleusRecord&, const NucleusRecord&) = default;
};

// One image patch with its segmented nuclei.
struct PatchBundle {
    std::string patch_id;
    std::string patient_id;
    int label = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> gray;  // height × width, row-major, 0..255
    std::vector<NucleusRecord> nuclei;

    int gray_at(int row, int col) const { return gray[static_cast<std::size_t>(row) * width + col]; }
    friend bool operator==(const PatchBundle&, const PatchBundle&) = default;
};

struct Edge {
    std::size_t i = 0;  // i < j
    std::size_t j = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Weighted undirected cell graph. Edges are stored once with i < j, sorted.
struct CellGraph {
    std::string patch_id;
    std::string patient_id;
    int label = 0;
    double critical_distance = 0.0;
    std::vector<Point> centroids;
    std::vector<pathomics::FeatureVector> features;
    std::vector<Edge> edges;

    std::size_t node_count() const { return centroids.size(); }
    std::size_t edge_count() const { return edges.size(); }
    friend bool operator==(const CellGraph&, const CellGraph&) = default;
};

// d_c / d for 0 < d <= d_c, else 0. Coincident points (d = 0) are rejected:
// build_graph merges them before any weight is computed.
double edge_weight(Point a, Point b, double critical_distance);

// Weighted edges among the given centroids, found with a uniform grid of cell
// size d_c. Sorted by (i, j).
std::vector<Edge> connect_centroids(const std::vector<Point>& centroids, double critical_distance);

void validate(const PatchBundle& bundle);

// One node per nucleus (input order). Nuclei whose centroids coincide exactly
// are merged into the first occurrence; `merged`, when given, receives the
// number of nuclei folded away.
CellGraph build_graph(const PatchBundle& bundle, double critical_distance, int n_bins = pathomics::kDefaultBins,
                      std::size_t* merged = nullptr);

std::string serialize_graph(const CellGraph& graph);
CellGraph parse_graph(std::string_view text);

std::string serialize_bundle(const PatchBundle& bundle);
PatchBundle parse_bundle(std::string_view text);

CellGraph read_graph_file(const std::string& path);
void write_graph_file(const std::string& path, const CellGraph& graph);
PatchBundle read_bundle_file(const std::string& path);
void write_bundle_file(const std::string& path, const PatchBundle& bundle);

}  // namespace histofuse
