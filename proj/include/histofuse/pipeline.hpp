#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "histofuse/gnn.hpp"
#include "histofuse/model.hpp"

namespace histofuse {

enum class Split { train, val, test };

Split parse_split(std::string_view name);
std::string_view split_name(Split split);

// One paired training unit: a patch image and the cell graph built from it.
struct Sample {
    std::string patch_id;
    std::string patient_id;
    int label = 0;
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;  // channels × height × width, gray / 255
    GraphData graph;            // unscaled node features
};

struct ManifestEntry {
    std::string bundle_path;
    std::string graph_path;
    Split split = Split::train;
};

// Lines `<patch_bundle_path> <cellgraph_path> <split>`; relative paths are
// resolved against the manifest's directory. Blank lines and `#` comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Pairs a bundle with its graph; patch ids, patient ids and labels must agree.
Sample make_sample(const PatchBundle& bundle, const CellGraph& graph);
Sample load_sample(const ManifestEntry& entry);

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

Dataset load_dataset(const std::string& manifest_path);
Dataset load_dataset(const std::vector<ManifestEntry>& entries);

// Per-column z-scoring of node features, fitted on the training graphs.
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> scale;  // 1 / std, or 1 for constant columns

    static FeatureScaler fit(const std::vector<Sample>& samples);
    bool empty() const { return mean.empty(); }
    void apply(GraphData& graph) const;
    void store(FusionModel& model) const;
    static FeatureScaler load(const FusionModel& model);
};

struct Batch {
    Tensor images;  // [B, C, H, W]
    GraphBatch graphs;
    std::vector<int> labels;
};

Batch make_batch(const std::vector<const Sample*>& samples, const FeatureScaler& scaler);

// Random horizontal and vertical flips (p = 0.5 each) of the image and a
// uniform jitter in [-max_shift, max_shift] of every node's two location features.
Sample augment(const Sample& sample, std::uint64_t seed, double max_shift = 5.0);

struct TrainConfig {
    double lr_max = 5e-4;
    double lr_min = 5e-6;
    std::uint64_t t_max = 10;
    double weight_decay = 1e-5;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 8;
    std::uint64_t seed = 0;
    bool augment = true;
    // Stop as soon as the mean training loss of an epoch drops below this (0 disables).
    double stop_below = 0.0;
};

struct TrainResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch; empty without a validation split
    std::size_t best_epoch = 0;      // 0-based
    std::size_t epochs_run = 0;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, std::optional<double> val_loss)>;

// Mini-batch cross-entropy training with AdamW and cosine learning rate
// (stepped per epoch). The monitored loss is the validation loss, or the
// training loss without a validation split; the best epoch's parameters are
// restored at the end and training stops `patience` epochs after the best.
TrainResult train(FusionModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Mean cross-entropy in eval mode.
double evaluate_loss(const FusionModel& model, const std::vector<Sample>& samples, std::size_t batch_size = 64);

// Positive-class probability per sample, eval mode.
std::vector<double> predict_probabilities(const FusionModel& model, const std::vector<Sample>& samples,
                                          std::size_t batch_size = 64);

struct PatientRow {
    std::string patient_id;
    std::size_t patches = 0;
    int label = 0;
    double score = 0.0;  // mean patch probability
    int vote = 0;        // majority vote of patch predictions
};

struct EvalReport {
    double acc = 0.0;
    std::optional<double> auc;          // absent when one class is missing
    std::optional<double> auc_patient;  // absent when one class is missing at patient level
    std::vector<PatientRow> patients;
};

EvalReport evaluate(const FusionModel& model, const std::vector<Sample>& samples);
EvalReport evaluate_probabilities(const std::vector<Sample>& samples, const std::vector<double>& probabilities);

// `run,seed,acc,auc,auc_patient` header plus one row; undefined metrics print as NA.
std::string metrics_csv(const std::string& run, std::uint64_t seed, const EvalReport& report, bool header = true);

}  // namespace histofuse
