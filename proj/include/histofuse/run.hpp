#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/cnn.hpp"
#include "histofuse/fusion.hpp"
#include "histofuse/gnn.hpp"
#include "histofuse/model.hpp"
#include "histofuse/pathomics.hpp"
#include "histofuse/pipeline.hpp"

namespace histofuse {

// Everything a train/eval run needs, read from a `key = value` file.
// Keys use the names listed by run_config_reference().
struct RunConfig {
    std::string manifest;
    std::string checkpoint = "model.ckpt";
    std::string metrics = "metrics.csv";
    std::string run = "run";
    std::optional<double> critical_distance;  // d_c: never defaulted
    int n_bins = pathomics::kDefaultBins;
    std::uint64_t seed = 0;

    TrainConfig train;

    // One branch per listed kind; all image branches share `cnn`, all graph branches `gnn`.
    std::vector<CnnKind> cnn_kinds{CnnKind::residual};
    CnnConfig cnn;
    std::vector<GnnKind> gnn_kinds{GnnKind::gcn};
    GnnConfig gnn;
    FusionConfig fusion;
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

// Every accepted key with its default and a one-line description.
std::vector<ConfigKey> run_config_reference();

// Sets one key. Throws ParameterError naming the key on unknown keys or bad values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

// Blank lines and `#` comments are ignored. Errors are ParseError carrying the
// line number and naming the offending key; repeated keys are rejected.
RunConfig parse_run_config(std::string_view text);
RunConfig read_run_config(const std::string& path);
// All keys, one `key = value` line each; parses back to an equal config.
std::string format_run_config(const RunConfig& config);

// Range checks that need more than one key (lr_min <= lr_max, ...).
void validate(const RunConfig& config);

// Architecture for graphs with `graph_features` node features and images with `channels` channels.
ModelConfig model_config(const RunConfig& config, std::size_t graph_features, std::size_t channels);

// --- graph building --------------------------------------------------------

struct GraphBuildItem {
    std::string bundle_path;
    std::string graph_path;
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t merged = 0;
    std::string error;  // non-empty when the bundle could not be processed
};

struct GraphBuildSummary {
    std::vector<GraphBuildItem> items;  // input order
    std::size_t patches = 0;            // successfully built
    std::size_t failed = 0;
    std::size_t min_nodes = 0, max_nodes = 0;
    double avg_nodes = 0.0;
    std::size_t min_edges = 0, max_edges = 0;
    double avg_edges = 0.0;

    // `patches=.. failed=.. min_nodes=.. avg_nodes=.. max_nodes=.. min_edges=.. avg_edges=.. max_edges=..`
    std::string line() const;
};

// `*.bundle` files of a directory, sorted by name.
std::vector<std::string> list_bundles(const std::string& dir);

// Builds one `<stem>.cellgraph` per bundle in `output_dir` using `jobs` worker threads.
GraphBuildSummary build_graph_files(const std::vector<std::string>& bundles, const std::string& output_dir,
                                    double critical_distance, int n_bins, std::size_t jobs = 1);

// Directory for graphs built on demand: $HISTOFUSE_CACHE_DIR when set, else empty.
std::string cache_dir();

// Makes sure every manifest entry has a graph file. Missing graphs are built
// from their bundle into the cache directory (when set) or at the listed
// path; entries are rewritten to point at the file actually used. Building
// requires d_c; without it a ParameterError names the missing `d_c` / `--dc`.
std::vector<ManifestEntry> resolve_graphs(std::vector<ManifestEntry> entries,
                                          std::optional<double> critical_distance, int n_bins);

// --- runs ----------------------------------------------------------------------

struct TrainRunResult {
    TrainResult training;
    EvalReport report;
    std::string evaluated_split;
    std::string metrics_csv;
};

using LogFn = std::function<void(const std::string&)>;

// Loads the manifest, trains, saves the checkpoint and writes the metrics CSV
// for the test split (falling back to val, then train, when a split is empty).
TrainRunResult run_train(const RunConfig& config, const LogFn& log = {});

// Evaluates a saved checkpoint on every sample of the manifest.
EvalReport run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    std::optional<double> critical_distance = std::nullopt, int n_bins = pathomics::kDefaultBins);

}  // namespace histofuse
