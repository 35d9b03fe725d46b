#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "histofuse/tensor.hpp"

namespace histofuse {

// Compressed sparse rows; used for (normalized) graph adjacency.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr;  // rows + 1 entries
    std::vector<std::size_t> col_idx;
    std::vector<double> values;

    std::size_t nnz() const { return values.size(); }
};

enum class Activation { relu, leaky_relu, gelu, reglu, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
// a ⊙ relu(b) where a, b are the two halves of the last axis.
Tensor reglu(const Tensor& x);
Tensor activation(Activation kind, const Tensor& x);

// --- reductions and layout -------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// --- dense algebra ---------------------------------------------------------
// x[*, in] · weight[in, out]
Tensor matmul(const Tensor& x, const Tensor& weight);
// x[*, in] · weight[in, out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// --- normalization and regularization --------------------------------------
inline constexpr double kLayerNormEps = 1e-5;

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = kLayerNormEps);
// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is identity.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);
Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training);

// --- probabilities and losses ----------------------------------------------
Tensor softmax(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// --- graph helpers ---------------------------------------------------------
// out = A · x for a constant sparse A.
Tensor spmm(const CsrMatrix& a, const Tensor& x);
// Scales row i of x[N, ...] by s[i].
Tensor mul_rows(const Tensor& x, const Tensor& s);
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);
// Mean of the rows of x[N, d] grouped by segment id; returns [groups, d].
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment, std::size_t groups);
// v / ||v||_2
Tensor l2_normalize(const Tensor& v);

// --- images ----------------------------------------------------------------
// x[B, C, H, W] cross-correlated with weight[O, C, k, k]; returns [B, O, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);
// Non-overlapping k×k average pooling; trailing rows/cols that do not fill a window are dropped.
Tensor avg_pool2d(const Tensor& x, std::size_t k);
// [B, C, H, W] -> [B, C]
Tensor global_avg_pool(const Tensor& x);

// --- attention -------------------------------------------------------------
// Scaled dot-product attention over q, k, v of shape [B, T, d], split into
// `heads` contiguous column groups; scale is 1/sqrt(d / heads).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace histofuse
