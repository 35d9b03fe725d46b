#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/nn.hpp"

namespace histofuse {

// ReLU(Conv(H) + H). The convolution must preserve the shape of H.
Tensor residual_block(const Tensor& h, const Conv2d& conv);

// ReLU(Conv(concat[H^1, ..., H^{l-1}])) with concatenation along channels.
Tensor dense_block(std::span<const Tensor> inputs, const Conv2d& conv);

enum class CnnKind { plain, residual, dense };

CnnKind parse_cnn_kind(std::string_view name);
std::string_view cnn_kind_name(CnnKind kind);

struct CnnConfig {
    CnnKind kind = CnnKind::plain;
    std::size_t in_channels = 1;
    std::size_t width = 8;   // channels after the stem
    std::size_t blocks = 2;  // residual or dense blocks after the stem
    std::size_t out = 64;    // d_I
};

// Toy image encoder. plain is LeNet-like (two 5x5 conv + ReLU + 2x2 average
// pool stages); residual and dense put `blocks` 3x3 blocks after a conv/pool
// stem. All kinds end with global average pooling and a linear map to d_I.
class CnnBranch {
public:
    CnnBranch() = default;
    CnnBranch(const CnnConfig& config, std::mt19937_64& rng);

    const CnnConfig& config() const { return config_; }
    std::size_t out_features() const { return config_.out; }

    // [B, C, H, W] -> [B, out]
    Tensor forward(const Tensor& images) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<Conv2d>& convs() { return convs_; }
    Linear& head() { return fc_; }

private:
    CnnConfig config_;
    std::vector<Conv2d> convs_;
    Linear fc_;
};

// H_I for one image [C, H, W]: [out]
Tensor image_embed(const Tensor& image, const CnnBranch& branch);

}  // namespace histofuse
