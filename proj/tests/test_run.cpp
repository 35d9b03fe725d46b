#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "histofuse/errors.hpp"
#include "histofuse/run.hpp"
#include "histofuse/textio.hpp"

using namespace histofuse;
namespace fs = std::filesystem;

namespace {

// 16x16 patch whose label shows up both in the gray levels and in the nuclei.
PatchBundle labelled_bundle(std::size_t i, std::mt19937_64& rng) {
    PatchBundle b;
    b.label = static_cast<int>(i % 2);
    b.patch_id = "patch" + std::to_string(i);
    b.patient_id = "pt" + std::to_string(i / 4 * 2 + i % 2);
    b.height = b.width = 16;
    std::uniform_int_distribution<int> jitter(-20, 20);
    for (std::size_t p = 0; p < 256; ++p) b.gray.push_back((b.label ? 170 : 80) + jitter(rng));
    std::uniform_int_distribution<int> pos(1, 13);
    for (int n = 0; n < 4 + static_cast<int>(i % 3); ++n) {
        const int r = pos(rng), c = pos(rng);
        NucleusRecord rec;
        rec.centroid = {c + 0.5 + 0.01 * n, r + 0.5};
        rec.pixels = {{r, c}, {r, c + 1}, {r + 1, c}, {r + 1, c + 1}};
        if (b.label == 1) rec.pixels.push_back({r + 2, c});
        b.nuclei.push_back(rec);
    }
    return b;
}

struct Workspace {
    fs::path dir;

    explicit Workspace(const std::string& name, std::size_t patches) {
        dir = fs::temp_directory_path() / name;
        fs::remove_all(dir);
        fs::create_directories(dir / "bundles");
        std::mt19937_64 rng(77);
        std::ofstream manifest(dir / "manifest.txt");
        for (std::size_t i = 0; i < patches; ++i) {
            const std::string stem = "p" + std::to_string(100 + i);
            write_bundle_file((dir / "bundles" / (stem + ".bundle")).string(), labelled_bundle(i, rng));
            manifest << "bundles/" << stem << ".bundle graphs/" << stem << ".cellgraph train\n";
        }
    }
    ~Workspace() { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string small_config(const Workspace& w) {
    std::ostringstream s;
    s << "manifest = " << w.path("manifest.txt") << "\n"
      << "checkpoint = " << w.path("model.ckpt") << "\n"
      << "metrics = " << w.path("metrics.csv") << "\n"
      << "d_c = 6\n"
      << "train.max_epochs = 80\n"
      << "train.batch_size = 8\n"
      << "train.lr_max = 0.01\n"
      << "train.lr_min = 0.001\n"
      << "train.augment = false\n"
      << "cnn.width = 4\n"
      << "cnn.blocks = 1\n"
      << "cnn.out = 8\n"
      << "gnn.hidden = 16\n"
      << "fusion.dropout = 0\n";
    return s.str();
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(HISTOFUSE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("run") {

TEST_CASE("config parsing") {
    const RunConfig c = parse_run_config("# comment\n\nd_c = 45.5\ntrain.batch_size = 256\ncnn = residual, dense\n");
    CHECK(*c.critical_distance == 45.5);
    CHECK(c.train.batch_size == 256);
    CHECK(c.cnn_kinds == std::vector<CnnKind>{CnnKind::residual, CnnKind::dense});
    CHECK_FALSE(parse_run_config("").critical_distance.has_value());

    auto failure = [](const std::string& text) -> std::pair<std::size_t, std::string> {
        try {
            parse_run_config(text);
        } catch (const ParseError& e) {
            return {e.line(), e.what()};
        }
        return {0, ""};
    };
    auto [line, msg] = failure("seed = 1\n\nbogus.key = 3\n");
    CHECK(line == 3);
    CHECK(msg.find("bogus.key") != std::string::npos);
    std::tie(line, msg) = failure("train.lr_max = fast\n");
    CHECK(line == 1);
    CHECK(msg.find("train.lr_max") != std::string::npos);
    std::tie(line, msg) = failure("seed = 1\nseed = 2\n");
    CHECK(line == 2);
    CHECK(msg.find("seed") != std::string::npos);
    std::tie(line, msg) = failure("d_c 40\n");
    CHECK(line == 1);
    CHECK(failure("d_c = -3\n").first == 1);
}

TEST_CASE("every documented key round-trips") {
    RunConfig c;
    set_config_value(c, "d_c", "12.5");
    set_config_value(c, "fusion.mode", "transformer");
    set_config_value(c, "gnn", "gin");
    const RunConfig back = parse_run_config(format_run_config(c));
    CHECK(format_run_config(back) == format_run_config(c));
    for (const ConfigKey& k : run_config_reference()) {
        CHECK_FALSE(k.help.empty());
        CHECK_NOTHROW(get_config_value(back, k.key));
    }
    CHECK_THROWS_AS(set_config_value(c, "nope", "1"), ParameterError);
}

TEST_CASE("validation across keys") {
    RunConfig c;
    c.train.lr_min = 1.0;
    CHECK_THROWS_AS(validate(c), ParameterError);
}

TEST_CASE("graph building") {
    Workspace w("histofuse_run_build", 4);
    const auto bundles = list_bundles(w.path("bundles"));
    REQUIRE(bundles.size() == 4);
    const GraphBuildSummary s = build_graph_files(bundles, w.path("out1"), 6.0, 32, 2);
    CHECK(s.patches == 4);
    CHECK(s.failed == 0);
    CHECK(s.line().rfind("patches=4 failed=0", 0) == 0);
    build_graph_files(bundles, w.path("out2"), 6.0, 32, 1);
    for (const auto& item : s.items) {
        const std::string name = fs::path(item.graph_path).filename().string();
        CHECK(textio::read_file(w.path("out1/" + name)) == textio::read_file(w.path("out2/" + name)));
    }

    fs::create_directories(w.path("empty"));
    const GraphBuildSummary none = build_graph_files(list_bundles(w.path("empty")), w.path("out3"), 6.0, 32);
    CHECK(none.patches == 0);
    CHECK(none.failed == 0);

    std::ofstream(w.path("bundles/broken.bundle")) << "not a bundle\n";
    const GraphBuildSummary bad = build_graph_files(list_bundles(w.path("bundles")), w.path("out4"), 6.0, 32);
    CHECK(bad.failed == 1);
    CHECK(bad.patches == 4);
}

TEST_CASE("missing d_c is reported with the flag name") {
    Workspace w("histofuse_run_dc", 2);
    RunConfig c = parse_run_config(small_config(w));
    c.critical_distance.reset();
    try {
        run_train(c);
        FAIL("expected an error");
    } catch (const ParameterError& e) {
        CHECK(std::string(e.what()).find("--dc") != std::string::npos);
    }
}

TEST_CASE("train then eval on an overfit set") {
    Workspace w("histofuse_run_train", 16);
    const RunConfig c = parse_run_config(small_config(w));
    const TrainRunResult r = run_train(c);
    CHECK(r.evaluated_split == "train");
    CHECK(fs::exists(w.path("model.ckpt")));
    CHECK(textio::read_file(w.path("metrics.csv")) == r.metrics_csv);
    const EvalReport e = run_eval(w.path("model.ckpt"), w.path("manifest.txt"));
    CHECK(e.acc >= 0.95);
    CHECK(e.acc == r.report.acc);

    const std::string first = r.metrics_csv;
    CHECK(run_train(c).metrics_csv == first);
}

TEST_CASE("command line exit codes") {
    Workspace w("histofuse_run_cli", 4);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("build-graphs --input " + w.path("bundles") + " --output " + w.path("g")) == 1);
    CHECK(run_cli("build-graphs --input " + w.path("bundles") + " --output " + w.path("g") + " --dc 6") == 0);
    fs::create_directories(w.path("empty"));
    CHECK(run_cli("build-graphs --input " + w.path("empty") + " --output " + w.path("g2") + " --dc 6") == 0);
    std::ofstream(w.path("bundles/broken.bundle")) << "junk\n";
    CHECK(run_cli("build-graphs --input " + w.path("bundles") + " --output " + w.path("g3") + " --dc 6") == 2);
    CHECK(run_cli("eval --model " + w.path("nothing.ckpt") + " --manifest " + w.path("manifest.txt")) == 1);
    std::ofstream(w.path("corrupt.ckpt")) << "garbage\n";
    CHECK(run_cli("eval --model " + w.path("corrupt.ckpt") + " --manifest " + w.path("manifest.txt")) == 2);
    CHECK(run_cli("gradcheck --seeds 1") == 0);
    CHECK(run_cli("gradcheck --seeds 1 --inject-fault") == 3);
    CHECK(run_cli("config") == 0);
}

}
