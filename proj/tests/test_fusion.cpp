#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/fusion.hpp"
#include "oracles.hpp"

using namespace histofuse;

namespace {

using oracle::Matrix;

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

void zero(Linear& l) {
    for (double& v : l.weight.mutable_data()) v = 0.0;
    for (double& v : l.bias.mutable_data()) v = 0.0;
}

void zero_block(TransBlock& b) {
    zero(b.attention.q);
    zero(b.attention.k);
    zero(b.attention.v);
    zero(b.attention.o);
    zero(b.mlp.linear);
}

Matrix affine(const Matrix& x, const Linear& l) {
    Matrix out = oracle::multiply(x, oracle::weight_of(l));
    const auto b = oracle::bias_of(l);
    for (auto& row : out)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return out;
}

Matrix norm_rows(const Matrix& x, const LayerNorm& ln) {
    Matrix out = x;
    for (auto& row : out) {
        double m = 0, v = 0;
        for (double e : row) m += e / static_cast<double>(row.size());
        for (double e : row) v += (e - m) * (e - m) / static_cast<double>(row.size());
        for (std::size_t j = 0; j < row.size(); ++j)
            row[j] = (row[j] - m) / std::sqrt(v + kLayerNormEps) * ln.gain.data()[j] + ln.shift.data()[j];
    }
    return out;
}

// PreNorm block on one sequence, written out step by step.
Matrix trans_block_oracle(const Matrix& h, const TransBlock& b) {
    const std::size_t t = h.size(), d = h[0].size(), heads = b.attention.heads, dh = d / heads;
    const Matrix n1 = norm_rows(h, b.norm1);
    const Matrix q = affine(n1, b.attention.q), k = affine(n1, b.attention.k), v = affine(n1, b.attention.v);
    Matrix att = oracle::zeros(t, d);
    for (std::size_t hd = 0; hd < heads; ++hd)
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> s(t);
            double top = -1e300, total = 0;
            for (std::size_t j = 0; j < t; ++j) {
                s[j] = 0;
                for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) s[j] += q[i][c] * k[j][c];
                s[j] /= std::sqrt(static_cast<double>(dh));
                top = std::max(top, s[j]);
            }
            for (double& e : s) total += (e = std::exp(e - top));
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) att[i][c] += s[j] / total * v[j][c];
        }
    Matrix h1 = affine(att, b.attention.o);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) h1[i][c] += h[i][c];
    const Matrix z = affine(norm_rows(h1, b.norm2), b.mlp.linear);
    Matrix out = h1;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) out[i][c] += z[i][c] * std::max(0.0, z[i][d + c]);
    return out;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("alignment width selection") {
    const std::vector<std::size_t> dims{512, 16};
    CHECK(choose_alignment_dim(dims, AlignStrategy::minimization) == 16);
    CHECK(choose_alignment_dim(dims, AlignStrategy::maximization) == 512);
    CHECK(choose_alignment_dim(dims, AlignStrategy::predefined) == 192);
    CHECK(choose_alignment_dim(dims, AlignStrategy::predefined, 64) == 64);
    CHECK_THROWS_AS(choose_alignment_dim(std::vector<std::size_t>{}, AlignStrategy::minimization), DimensionError);
    CHECK(parse_align_strategy("maximization") == AlignStrategy::maximization);
}

TEST_CASE("concatenation widths") {
    std::mt19937_64 rng(1);
    FusionConfig cfg;
    cfg.mode = FusionMode::none;
    CHECK(FusionLayer(cfg, {512, 16}, rng).out_features() == 528);
    CHECK(FusionLayer(cfg, {512, 512, 16}, rng).out_features() == 1040);
    cfg.mode = FusionMode::mlp;
    FusionLayer mlp(cfg, {512, 16}, rng);
    CHECK(mlp.mlp_blocks()[0].linear.in_features() == 528);
    CHECK(mlp.out_features() == 128);
    CHECK_THROWS_AS(FusionLayer(cfg, {}, rng), DimensionError);
}

TEST_CASE("one mlp block in eval mode equals linear then relu") {
    std::mt19937_64 rng(2);
    FusionConfig cfg;
    cfg.mlp_width = 6;
    FusionLayer layer(cfg, {3, 2}, rng);
    const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 2}, rng);
    Context ctx;
    const std::vector<Tensor> in{a, b};
    const auto got = values(layer.forward(in, ctx));

    Matrix joined = oracle::zeros(4, 5);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) joined[i][j] = a.data()[i * 3 + j];
        for (std::size_t j = 0; j < 2; ++j) joined[i][3 + j] = b.data()[i * 2 + j];
    }
    const Matrix want = affine(joined, layer.mlp_blocks()[0].linear);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(got[i * 6 + j] - std::max(0.0, want[i][j])) < 1e-13);

    CHECK(values(layer.forward(in, ctx)) == got);
}

TEST_CASE("attention with one token or identical tokens") {
    std::mt19937_64 rng(3);
    const Mhsa att(8, 2, rng);
    const Tensor h = random_tensor({1, 1, 8}, rng);
    const auto got = values(att(h));
    const auto want = values(att.o(att.v(h)));
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-14);

    std::vector<double> twice = values(h);
    twice.insert(twice.end(), twice.begin(), twice.end());
    const auto rows = values(att(Tensor::from({1, 2, 8}, twice)));
    for (std::size_t i = 0; i < 8; ++i) CHECK(rows[i] == rows[8 + i]);

    CHECK_THROWS_AS(Mhsa(10, 4, rng), DimensionError);
}

TEST_CASE("transformer block equals the written-out oracle") {
    std::mt19937_64 rng(4);
    for (std::size_t t : {1, 2, 3, 5}) {
        TransBlock block(8, 2, Activation::reglu, 0.1, rng);
        for (double& g : block.norm1.gain.mutable_data()) g = 1.0 + 0.1 * std::normal_distribution<double>()(rng);
        const Tensor h = random_tensor({1, t, 8}, rng);
        Context ctx;
        const auto got = values(block(h, ctx));
        REQUIRE(got.size() == t * 8);
        const Matrix want = trans_block_oracle(oracle::from_row_major(values(h), t, 8), block);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(got[i * 8 + c] - want[i][c]) < 1e-12);
    }
}

TEST_CASE("zero-weight collapse identities") {
    std::mt19937_64 rng(5);
    TransBlock block(8, 4, Activation::reglu, 0.0, rng);
    zero_block(block);
    const Tensor h = random_tensor({2, 3, 8}, rng);
    Context ctx;
    CHECK(values(block(h, ctx)) == values(h));

    FusionConfig cfg;
    cfg.mode = FusionMode::transformer;
    cfg.align = AlignStrategy::minimization;
    FusionLayer layer(cfg, {24, 16}, rng);
    CHECK(layer.width() == 16);
    for (TransBlock& b : layer.trans_blocks()) zero_block(b);
    const Tensor xi = random_tensor({3, 24}, rng), xg = random_tensor({3, 16}, rng);
    const std::vector<Tensor> in{xi, xg};
    const auto fused = values(layer.forward(in, ctx));
    const auto ai = values(layer.aligns()[0](xi)), ag = values(layer.aligns()[1](xg));
    REQUIRE(fused.size() == 48);
    for (std::size_t i = 0; i < 48; ++i) CHECK(fused[i] == (ai[i] + ag[i]) / 2.0);

    // Token order does not matter once the blocks are zero.
    const std::vector<Tensor> swapped_tokens{Tensor::from({3, 16}, ag), Tensor::from({3, 16}, ai)};
    const std::vector<Linear> identity(2, [] {
        Linear l;
        l.weight = Tensor::zeros({16, 16});
        for (std::size_t i = 0; i < 16; ++i) l.weight.mutable_data()[i * 17] = 1.0;
        l.bias = Tensor::zeros({16});
        return l;
    }());
    CHECK(values(transformer_fuse(swapped_tokens, identity, layer.trans_blocks(), ctx)) == fused);
}

TEST_CASE("transformer shapes for one or two branches of each kind") {
    std::mt19937_64 rng(6);
    FusionConfig cfg;
    cfg.mode = FusionMode::transformer;
    cfg.align = AlignStrategy::predefined;
    cfg.predefined_dim = 16;
    for (std::size_t ki = 1; ki <= 2; ++ki)
        for (std::size_t kg = 1; kg <= 2; ++kg) {
            std::vector<std::size_t> dims(ki, 12);
            dims.insert(dims.end(), kg, 16);
            const FusionLayer layer(cfg, dims, rng);
            std::vector<Tensor> in;
            for (std::size_t d : dims) in.push_back(random_tensor({2, d}, rng));
            Context ctx;
            CHECK(layer.forward(in, ctx).shape() == Shape{2, 16});
        }
}

TEST_CASE("prediction head") {
    Linear head;
    head.weight = Tensor::zeros({5, 2});
    head.bias = Tensor::from({2}, {0.25, -1.5});
    std::mt19937_64 rng(7);
    CHECK(values(predict(random_tensor({1, 5}, rng), head)) == std::vector<double>{0.25, -1.5});
    CHECK_THROWS_AS(predict(random_tensor({1, 4}, rng), head), DimensionError);
}

TEST_CASE("dropout is inert in eval mode and seeded in training") {
    std::mt19937_64 rng(8);
    FusionConfig cfg;
    cfg.mlp_width = 32;
    cfg.dropout = 0.5;
    const FusionLayer layer(cfg, {6}, rng);
    const std::vector<Tensor> in{random_tensor({4, 6}, rng)};
    Context eval;
    CHECK(values(layer.forward(in, eval)) == values(layer.forward(in, eval)));
    Context a{true, std::mt19937_64(3)}, b{true, std::mt19937_64(3)};
    CHECK(values(layer.forward(in, a)) == values(layer.forward(in, b)));
}

}
