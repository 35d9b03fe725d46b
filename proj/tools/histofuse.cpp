#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/gradcheck.hpp"
#include "histofuse/pipeline.hpp"
#include "histofuse/run.hpp"
#include "histofuse/synth.hpp"
#include "histofuse/textio.hpp"

namespace fs = std::filesystem;
using namespace histofuse;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

int build_graphs(const std::string& input, const std::string& output, double dc, int bins, std::size_t jobs) {
    const auto bundles = list_bundles(input);
    const GraphBuildSummary summary = build_graph_files(bundles, output, dc, bins, jobs);
    for (const GraphBuildItem& item : summary.items) {
        if (!item.error.empty())
            std::cerr << "error: " << item.bundle_path << ": " << item.error << '\n';
        else if (item.merged > 0)
            std::cerr << "warning: " << item.bundle_path << ": merged " << item.merged << " coincident nuclei\n";
    }
    std::cout << summary.line() << '\n';
    return summary.failed == 0 ? kOk : kData;
}

int train_cmd(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<double> dc,
              const std::vector<std::string>& overrides) {
    RunConfig cfg = read_run_config(config_path);
    // Relative paths inside the config file are taken relative to the file itself.
    const fs::path base = fs::path(config_path).parent_path();
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (seed) cfg.seed = *seed;
    if (dc) cfg.critical_distance = *dc;
    auto rebase = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative() && !base.empty()) p = (base / p).string();
    };
    rebase(cfg.manifest);
    rebase(cfg.checkpoint);
    rebase(cfg.metrics);
    validate(cfg);
    const TrainRunResult res = run_train(cfg, [](const std::string& line) { std::cerr << line << '\n'; });
    std::cout << res.metrics_csv;
    return kOk;
}

int eval_cmd(const std::string& model, const std::string& manifest, std::optional<double> dc, int bins,
             const std::string& run, std::uint64_t seed) {
    const EvalReport report = run_eval(model, manifest, dc, bins);
    std::cout << metrics_csv(run, seed, report);
    return kOk;
}

int synth_cmd(const synth::SweepConfig& config, const std::string& out) {
    const auto rows = synth::run_sweep(config, [](const synth::SweepRow& r) {
        std::cerr << "alpha=" << textio::format_double(r.alpha) << " model=" << synth::student_name(r.model)
                  << " run=" << r.run << " rmse=" << textio::format_double(r.test_rmse) << " epochs=" << r.epochs
                  << '\n';
    });
    const auto summary = synth::summarize(rows);
    fs::create_directories(out);
    textio::write_file((fs::path(out) / "sweep.csv").string(), synth::sweep_csv(rows));
    textio::write_file((fs::path(out) / "summary.csv").string(), synth::summary_csv(summary));
    textio::write_file((fs::path(out) / "summary.dat").string(), synth::summary_dat(summary));
    std::cout << synth::summary_csv(summary);
    return kOk;
}

int gradcheck_cmd(const GradCheckOptions& options) {
    const auto results = run_gradcheck_suite(options);
    std::cout << gradcheck_report(results);
    for (const auto& r : results)
        if (!r.passed) return kNumeric;
    return kOk;
}

int config_cmd() {
    for (const ConfigKey& k : run_config_reference())
        std::cout << k.key << " = " << k.default_value << "    # " << k.help << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"histofuse: paired image / cell-graph classification and fusion experiments"};
    app.require_subcommand(1);

    auto* bg = app.add_subcommand("build-graphs", "Build one cell graph per patch bundle");
    std::string bg_input, bg_output;
    double bg_dc = 0.0;
    int bins = pathomics::kDefaultBins;
    std::size_t jobs = 1;
    bg->add_option("--input", bg_input, "Directory of *.bundle files")->required()->check(CLI::ExistingDirectory);
    bg->add_option("--output", bg_output, "Directory for *.cellgraph files")->required();
    bg->add_option("--dc", bg_dc, "Critical distance in pixels")->required()->check(CLI::PositiveNumber);
    bg->add_option("--bins", bins, "Gray levels for texture features")->check(CLI::Range(1, 4096));
    bg->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(std::size_t{1}, std::size_t{256}));

    auto* tr = app.add_subcommand("train", "Train a model from a config file");
    std::string tr_config;
    std::optional<std::uint64_t> tr_seed;
    std::optional<double> tr_dc;
    std::vector<std::string> tr_set;
    tr->add_option("--config", tr_config, "key = value run file")->required()->check(CLI::ExistingFile);
    tr->add_option("--seed", tr_seed, "Overrides the seed of the config file");
    tr->add_option("--dc", tr_dc, "Critical distance for graphs that still need building");
    tr->add_option("--set", tr_set, "key=value override, repeatable");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on every sample of a manifest");
    std::string ev_model, ev_manifest, ev_run = "eval";
    std::optional<double> ev_dc;
    std::uint64_t ev_seed = 0;
    ev->add_option("--model", ev_model, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", ev_manifest, "Manifest file")->required()->check(CLI::ExistingFile);
    ev->add_option("--dc", ev_dc, "Critical distance for graphs that still need building");
    ev->add_option("--bins", bins, "Gray levels for texture features")->check(CLI::Range(1, 4096));
    ev->add_option("--run", ev_run, "Run name written to the CSV");
    ev->add_option("--seed", ev_seed, "Seed written to the CSV");

    auto* sy = app.add_subcommand("synth", "Synthetic regression sweep over alpha");
    synth::SweepConfig sweep;
    std::string sy_out = "synth_out";
    sy->add_option("--alphas", sweep.alphas, "Mixing weights")->delimiter(',');
    sy->add_option("--runs", sweep.runs, "Runs per alpha and model")->check(CLI::PositiveNumber);
    sy->add_option("--seed", sweep.seed, "Base seed");
    sy->add_option("--out", sy_out, "Output directory");
    sy->add_option("--pairs", sweep.pairs, "Generated image/graph pairs")->check(CLI::Range(10, 1000000));
    sy->add_option("--teachers", sweep.teachers, "Teacher seeds averaged per target")->check(CLI::PositiveNumber);
    sy->add_option("--epochs", sweep.train.max_epochs, "Epoch cap per run")->check(CLI::PositiveNumber);
    sy->add_option("--blocks", sweep.fusion_blocks, "MLP blocks of the fusion student")->check(CLI::Range(1, 16));

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    GradCheckOptions gopt;
    gc->add_option("--seed", gopt.seed, "Base seed");
    gc->add_option("--seeds", gopt.seeds, "Random instances per check")->check(CLI::PositiveNumber);
    gc->add_flag("--inject-fault", gopt.inject_fault)->group("");

    app.add_subcommand("config", "Print every run-config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*bg) return build_graphs(bg_input, bg_output, bg_dc, bins, jobs);
        if (*tr) return train_cmd(tr_config, tr_seed, tr_dc, tr_set);
        if (*ev) return eval_cmd(ev_model, ev_manifest, ev_dc, bins, ev_run, ev_seed);
        if (*sy) return synth_cmd(sweep, sy_out);
        if (*gc) return gradcheck_cmd(gopt);
        return config_cmd();
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
}
