#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "histofuse/gnn.hpp"
#include "histofuse/model.hpp"

namespace histofuse::synth {

inline constexpr std::size_t kImageSize = 28;
inline constexpr std::size_t kCellSize = 4;
inline constexpr std::size_t kGridSide = kImageSize / kCellSize;  // 7 × 7 = 49 superpixels

// A gray image in [0, 1] and the superpixel graph summarised from it.
// `graph` carries the mean intensity of each cell as its only feature;
// `positions` holds the cell centres in pixels.
struct Pair {
    std::vector<double> image;  // kImageSize²
    GraphData graph;
    std::vector<Point> positions;
};

struct Dataset {
    std::vector<Pair> pairs;
};

// Two fixed-length strokes under a fine stripe texture of random orientation and depth.
std::vector<double> render_image(std::mt19937_64& rng);

// Grid-cell averaging into 7 × 7 nodes joined to their 8 neighbours (weight 1).
Pair image_to_pair(std::vector<double> image);

Dataset generate_pairs(std::size_t n, std::uint64_t seed);

// Graph fed to the networks: [intensity, x / 28, y / 28] per node.
GraphData model_graph(const Pair& pair);

// Architectures shared by teachers and students.
ModelConfig image_teacher_config(std::uint64_t seed);
ModelConfig graph_teacher_config(std::uint64_t seed);

struct Teachers {
    std::vector<double> f_cnn;
    std::vector<double> f_gnn;
};

// Mean scalar output of n_seeds randomly initialised, frozen networks
// (seeds seed, seed + 1, ...).
Teachers teacher_targets(const Dataset& data, std::size_t n_seeds, std::uint64_t seed = 0);

// (v − mean) / std with the population std. Throws InputError on zero spread.
std::vector<double> normalize_targets(const std::vector<double>& values);

// y = α·f_cnn + (1 − α)·f_gnn, then standardised.
std::vector<double> make_labels(const std::vector<double>& f_cnn, const std::vector<double>& f_gnn, double alpha);
std::vector<double> mix_targets(const std::vector<double>& f_cnn, const std::vector<double>& f_gnn, double alpha);

enum class Student { image, graph, fusion };

std::string_view student_name(Student s);
ModelConfig student_config(Student s, std::size_t fusion_blocks, std::uint64_t seed);

struct RegressionConfig {
    double lr = 3e-3;
    double weight_decay = 1e-5;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
};

struct RegressionResult {
    double best_test_rmse = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<double> test_rmse;  // per epoch
};

// MSE training with a constant learning rate; stops once the test RMSE has
// not improved for `patience` epochs and reports the best test RMSE.
RegressionResult train_regressor(FusionModel& model, const std::vector<const Pair*>& train_pairs,
                                 const std::vector<double>& train_y, const std::vector<const Pair*>& test_pairs,
                                 const std::vector<double>& test_y, const RegressionConfig& config);

std::vector<double> predict(const FusionModel& model, const std::vector<const Pair*>& pairs,
                            std::size_t batch_size = 128);

struct SweepConfig {
    std::vector<double> alphas{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    std::size_t runs = 5;
    std::size_t pairs = 2000;
    std::size_t teachers = 5;
    double train_fraction = 0.8;
    std::size_t fusion_blocks = 1;
    std::vector<Student> students{Student::image, Student::graph, Student::fusion};
    std::uint64_t seed = 0;
    RegressionConfig train;
};

struct SweepRow {
    double alpha = 0.0;
    Student model = Student::image;
    std::size_t run = 0;
    double test_rmse = 0.0;
    std::size_t epochs = 0;
};

struct SummaryRow {
    double alpha = 0.0;
    Student model = Student::image;
    std::size_t runs = 0;
    double mean = 0.0;
    double std = 0.0;  // population std over runs
};

using SweepProgress = std::function<void(const SweepRow&)>;

std::vector<SweepRow> run_sweep(const SweepConfig& config, const SweepProgress& progress = {});
std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows);

// `alpha,model,run,test_rmse`
std::string sweep_csv(const std::vector<SweepRow>& rows);
// `alpha,model,runs,mean_rmse,std_rmse`
std::string summary_csv(const std::vector<SummaryRow>& rows);
// Whitespace table: alpha, then mean and std per model (image, graph, fusion).
std::string summary_dat(const std::vector<SummaryRow>& rows);

}  // namespace histofuse::synth
