#include <doctest.h>

#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/synth.hpp"

using namespace histofuse;
using namespace histofuse::synth;

namespace {

bool connected(const GraphData& g) {
    std::vector<std::vector<std::size_t>> adj(g.nodes);
    for (const Edge& e : g.edges) {
        adj[e.i].push_back(e.j);
        adj[e.j].push_back(e.i);
    }
    std::vector<bool> seen(g.nodes, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        for (std::size_t u : adj[v])
            if (!seen[u]) {
                seen[u] = true;
                ++count;
                q.push(u);
            }
    }
    return count == g.nodes;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double pop_std(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / v.size());
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("generated pairs") {
    const Dataset a = generate_pairs(20, 3), b = generate_pairs(20, 3);
    REQUIRE(a.pairs.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(a.pairs[i].image == b.pairs[i].image);
        CHECK(a.pairs[i].graph.x == b.pairs[i].graph.x);
        CHECK(a.pairs[i].graph.nodes <= 75);
        CHECK(a.pairs[i].image.size() == kImageSize * kImageSize);
        CHECK(connected(a.pairs[i].graph));
    }
    CHECK(generate_pairs(3, 4).pairs[0].image != a.pairs[0].image);

    const Pair blank = image_to_pair(std::vector<double>(kImageSize * kImageSize, 0.0));
    for (double v : blank.graph.x) CHECK(v == 0.0);
    const GraphData g = model_graph(blank);
    CHECK(g.features == 3);
}

TEST_CASE("teacher averaging") {
    const Dataset d = generate_pairs(12, 8);
    const Teachers one = teacher_targets(d, 1, 5), two = teacher_targets(d, 1, 6), both = teacher_targets(d, 2, 5);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(std::abs(both.f_cnn[i] - (one.f_cnn[i] + two.f_cnn[i]) / 2) < 1e-12);
        CHECK(std::abs(both.f_gnn[i] - (one.f_gnn[i] + two.f_gnn[i]) / 2) < 1e-12);
    }
    CHECK(teacher_targets(d, 1, 5).f_cnn == one.f_cnn);
    CHECK_THROWS_AS(teacher_targets(d, 0), ParameterError);
}

TEST_CASE("target normalisation") {
    const auto n = normalize_targets({1, 2, 3});
    CHECK(n[0] == doctest::Approx(-1.224744871391589));
    CHECK(n[1] == 0.0);
    CHECK(n[2] == doctest::Approx(1.224744871391589));

    const std::vector<double> v{0.3, -1.2, 4.4, 2.0, 0.0, 7.5};
    const auto z = normalize_targets(v);
    CHECK(std::abs(mean_of(z)) < 1e-12);
    CHECK(std::abs(pop_std(z) - 1.0) < 1e-12);
    std::vector<double> moved;
    for (double x : v) moved.push_back(2.5 * x - 7.0);
    const auto z2 = normalize_targets(moved);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(z[i] - z2[i]) < 1e-12);

    CHECK_THROWS_AS(normalize_targets({2, 2, 2}), InputError);
}

TEST_CASE("label mixing") {
    CHECK(mix_targets({0.2}, {-0.4}, 0.5)[0] == doctest::Approx(-0.1));
    const std::vector<double> c{1, 4, 2, 8}, g{3, -1, 0, 2};
    CHECK(make_labels(c, g, 1.0) == normalize_targets(c));
    CHECK(make_labels(c, g, 0.0) == normalize_targets(g));
    const auto y = make_labels(c, g, 0.3);
    CHECK(std::abs(mean_of(y)) < 1e-9);
    CHECK(std::abs(pop_std(y) - 1.0) < 1e-9);
    CHECK_THROWS_AS(mix_targets(c, g, 1.5), ParameterError);
}

TEST_CASE("student architectures") {
    CHECK(student_config(Student::image, 1, 0).gnns.empty());
    CHECK(student_config(Student::graph, 1, 0).cnns.empty());
    const ModelConfig f = student_config(Student::fusion, 3, 0);
    CHECK(f.fusion.mode == FusionMode::mlp);
    CHECK(f.fusion.blocks == 3);
    CHECK(f.fusion.mlp_width == 10);
}

TEST_CASE("small sweep output contract") {
    SweepConfig cfg;
    cfg.alphas = {0.0, 0.5};
    cfg.runs = 2;
    cfg.pairs = 40;
    cfg.teachers = 1;
    cfg.train.max_epochs = 2;
    const auto rows = run_sweep(cfg);
    CHECK(rows.size() == 2 * 3 * 2);
    for (const SweepRow& r : rows) CHECK(r.test_rmse >= 0.0);
    const auto summary = summarize(rows);
    CHECK(summary.size() == 2 * 3);
    CHECK(count_lines(sweep_csv(rows)) == 1 + rows.size());
    CHECK(count_lines(summary_csv(summary)) == 1 + summary.size());
    CHECK(sweep_csv(rows).rfind("alpha,model,run,test_rmse\n", 0) == 0);

    const auto again = run_sweep(cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].test_rmse == rows[i].test_rmse);

    cfg.runs = 1;
    for (const SummaryRow& s : summarize(run_sweep(cfg))) CHECK(s.std == 0.0);
}

}
