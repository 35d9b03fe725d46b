#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "histofuse/errors.hpp"
#include "histofuse/pathomics.hpp"
#include "pathomics_oracle.hpp"

using namespace histofuse::pathomics;

namespace {

NucleusRegion square(int side, double value, int r0 = 0, int c0 = 0) {
    NucleusRegion r;
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            r.pixels.push_back({r0 + i, c0 + j});
            r.intensities.push_back(value);
        }
    return r;
}

double rel_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_SUITE("pathomics") {

TEST_CASE("quantize bins") {
    NucleusRegion r;
    r.pixels = {{0, 0}, {0, 1}};
    r.intensities = {0, 255};
    CHECK(quantize(r, 2).levels == std::vector<int>{1, 2});

    const auto flat = quantize(square(3, 77.0), 16);
    for (int l : flat.levels) CHECK(l == 1);

    NucleusRegion ramp;
    for (int v = 0; v < 256; ++v) {
        ramp.pixels.push_back({v / 16, v % 16});
        ramp.intensities.push_back(v);
    }
    const auto q = quantize(ramp, 32);
    for (int v = 0; v < 256; ++v) CHECK(q.levels[v] == v / 8 + 1);

    CHECK_THROWS_AS(quantize(ramp, 1), histofuse::ParameterError);
}

TEST_CASE("location") {
    NucleusRegion r;
    r.pixels = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    r.intensities = {1, 2, 3, 4};
    CHECK(location_features(r) == std::array<double, 2>{0.5, 0.5});
    NucleusRegion one;
    one.pixels = {{7, 3}};
    one.intensities = {9};
    CHECK(location_features(one) == std::array<double, 2>{7.0, 3.0});
}

TEST_CASE("first order small cases") {
    NucleusRegion r;
    r.pixels = {{0, 0}, {0, 1}, {0, 2}};
    r.intensities = {1, 2, 3};
    const auto f = first_order_features(r);
    CHECK(f[8] == doctest::Approx(2.0));       // mean
    CHECK(f[11] == doctest::Approx(2.0));      // range
    CHECK(f[17] == doctest::Approx(2.0 / 3));  // variance

    NucleusRegion c;
    c.pixels = {{0, 0}, {0, 1}};
    c.intensities = {5, 5};
    const auto g = first_order_features(c);
    CHECK(g[17] == 0.0);
    CHECK(g[3] == 0.0);   // entropy
    CHECK(g[16] == 1.0);  // uniformity
    CHECK(g[5] == 0.0);   // kurtosis
    CHECK(g[14] == 0.0);  // skewness
}

TEST_CASE("glcm on a constant region and a checkerboard") {
    const auto f = glcm_features(quantize(square(4, 10.0)));
    CHECK(f[4] == 0.0);   // contrast
    CHECK(f[17] == 1.0);  // joint energy
    CHECK(f[18] == 0.0);  // joint entropy
    CHECK(f[5] == 0.0);   // correlation

    // 2x2 checkerboard: horizontal and vertical neighbours differ by one level, diagonals agree.
    NucleusRegion board;
    board.pixels = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    board.intensities = {0, 255, 255, 0};
    const auto q = quantize(board, 2);
    const auto horizontal = cooccurrence_counts(q, 0, 1);
    CHECK(horizontal == std::vector<double>{0, 2, 2, 0});
    const auto diagonal = cooccurrence_counts(q, 1, 1);
    CHECK(diagonal == std::vector<double>{2, 0, 0, 0});
    // Summed over four offsets: 8 pairs at distance one level, 4 at zero.
    CHECK(glcm_features(q)[4] == doctest::Approx(8.0 / 12.0));
}

TEST_CASE("size-zone and tone-difference degenerate values") {
    for (int side : {1, 2, 5}) {
        const auto q = quantize(square(side, 42.0));
        const double n = side * side;
        const auto z = glszm_features(q);
        CHECK(z[10] == doctest::Approx(1.0 / (n * n)));  // small area emphasis
        CHECK(z[4] == doctest::Approx(n * n));           // large area emphasis
        const auto t = ngtdm_features(q);
        CHECK(t == std::array<double, 5>{0.0, kCoarsenessCap, 0.0, 0.0, 0.0});
    }
}

TEST_CASE("single pixel takes the constant-region values") {
    const auto one = extract_node_features(square(1, 100.0), 32);
    const auto many = extract_node_features(square(3, 100.0, -1, -1), 32);
    // Texture families (everything after location and first order) agree where
    // they do not depend on region size.
    const auto q1 = quantize(square(1, 100.0));
    const auto q3 = quantize(square(3, 100.0));
    CHECK(glcm_features(q1) == glcm_features(q3));
    CHECK(ngtdm_features(q1) == ngtdm_features(q3));
    for (double v : one) CHECK(std::isfinite(v));
    for (double v : many) CHECK(std::isfinite(v));
}

TEST_CASE("every family agrees with the literal oracle") {
    std::mt19937_64 rng(20240611);
    for (int trial = 0; trial < 60; ++trial) {
        const NucleusRegion region = oracle::random_region(rng);
        for (int bins : {8, 32}) {
            const FeatureVector got = extract_node_features(region, bins);
            const std::vector<double> want = oracle::all_features(region, bins);
            REQUIRE(want.size() == kFeatureCount);
            for (std::size_t k = 0; k < kFeatureCount; ++k) {
                INFO("trial " << trial << " bins " << bins << " feature " << feature_names()[k] << " got "
                              << got[k] << " want " << want[k]);
                CHECK(rel_gap(got[k], want[k]) < 1e-9);
            }
        }
    }
}

TEST_CASE("random 8x8 block agrees with the oracle") {
    std::mt19937_64 rng(88);
    std::uniform_int_distribution<int> gray(0, 255);
    NucleusRegion block;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            block.pixels.push_back({r, c});
            block.intensities.push_back(gray(rng) / 32 * 32);
        }
    const auto got = extract_node_features(block);
    const auto want = oracle::all_features(block);
    for (std::size_t k = 0; k < kFeatureCount; ++k) CHECK(rel_gap(got[k], want[k]) < 1e-9);
}

TEST_CASE("translation only moves the location features") {
    std::mt19937_64 rng(5);
    const NucleusRegion region = oracle::random_region(rng);
    NucleusRegion moved = region;
    for (Pixel& p : moved.pixels) {
        p.row += 10;
        p.col += 10;
    }
    const auto a = extract_node_features(region);
    const auto b = extract_node_features(moved);
    CHECK(b[0] == doctest::Approx(a[0] + 10));
    CHECK(b[1] == doctest::Approx(a[1] + 10));
    for (std::size_t k = 2; k < kFeatureCount; ++k) CHECK(a[k] == b[k]);
    CHECK(extract_node_features(region) == a);
}

TEST_CASE("invalid regions are rejected") {
    NucleusRegion empty;
    CHECK_THROWS_AS(extract_node_features(empty), histofuse::InputError);
    NucleusRegion dup;
    dup.pixels = {{1, 1}, {1, 1}};
    dup.intensities = {3, 4};
    CHECK_THROWS_AS(extract_node_features(dup), histofuse::InputError);
    NucleusRegion bright;
    bright.pixels = {{0, 0}};
    bright.intensities = {300};
    CHECK_THROWS_AS(extract_node_features(bright), histofuse::InputError);
}

TEST_CASE("feature names are unique and versioned in order") {
    const auto& names = feature_names();
    CHECK(names.front() == "location_center_of_mass_x");
    CHECK(names.back() == "ngtdm_strength");
    std::set<std::string_view> unique(names.begin(), names.end());
    CHECK(unique.size() == kFeatureCount);
}

}
