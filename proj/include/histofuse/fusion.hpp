#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/nn.hpp"

namespace histofuse {

// none concatenates the branch outputs and feeds the head directly; it is how
// single-branch baselines are expressed.
enum class FusionMode { none, mlp, transformer };
enum class AlignStrategy { minimization, maximization, predefined };

FusionMode parse_fusion_mode(std::string_view name);
std::string_view fusion_mode_name(FusionMode mode);
AlignStrategy parse_align_strategy(std::string_view name);
std::string_view align_strategy_name(AlignStrategy strategy);

struct FusionConfig {
    FusionMode mode = FusionMode::mlp;
    std::size_t blocks = 1;
    AlignStrategy align = AlignStrategy::minimization;
    std::size_t predefined_dim = 192;
    std::size_t mlp_width = 128;
    std::size_t heads = 4;
    double dropout = 0.1;
    Activation mlp_activation = Activation::relu;
    Activation block_activation = Activation::reglu;
};

std::size_t choose_alignment_dim(std::span<const std::size_t> dims, AlignStrategy strategy,
                                 std::size_t predefined = 192);

// Dropout(act(Linear(H)))
struct MlpBlock {
    Linear linear;
    Activation act = Activation::relu;
    double dropout = 0.0;

    MlpBlock() = default;
    MlpBlock(std::size_t in, std::size_t out, Activation act, double dropout, std::mt19937_64& rng);

    std::size_t out_features() const;
    Tensor operator()(const Tensor& x, Context& ctx) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Multi-head self-attention with learnable Q, K, V and output projections.
struct Mhsa {
    Linear q, k, v, o;
    std::size_t heads = 1;

    Mhsa() = default;
    Mhsa(std::size_t width, std::size_t heads, std::mt19937_64& rng);

    // [B, T, d] -> [B, T, d]
    Tensor operator()(const Tensor& h) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// PreNorm block:
//   H1  = H + MHSA(LN(H))
//   out = H1 + MLPBlock(LN(H1))
// With a ReGLU activation the MLP expands to 2d so the gate halves it back to d.
struct TransBlock {
    LayerNorm norm1;
    Mhsa attention;
    LayerNorm norm2;
    MlpBlock mlp;

    TransBlock() = default;
    TransBlock(std::size_t width, std::size_t heads, Activation act, double dropout, std::mt19937_64& rng);

    Tensor operator()(const Tensor& h, Context& ctx) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Concatenate along features, then apply the MLP blocks in order.
Tensor mlp_fuse(std::span<const Tensor> inputs, std::span<const MlpBlock> blocks, Context& ctx);

// Align each [B, d_i] input to d, stack into [B, T, d], run the blocks, mean-pool the tokens.
Tensor transformer_fuse(std::span<const Tensor> inputs, std::span<const Linear> aligns,
                        std::span<const TransBlock> blocks, Context& ctx);

class FusionLayer {
public:
    FusionLayer() = default;
    FusionLayer(const FusionConfig& config, std::vector<std::size_t> input_dims, std::mt19937_64& rng);

    const FusionConfig& config() const { return config_; }
    std::size_t width() const { return width_; }  // aligned token width (transformer only)
    std::size_t out_features() const { return out_; }

    // inputs[i] is [B, input_dims[i]]; returns [B, out_features()].
    Tensor forward(std::span<const Tensor> inputs, Context& ctx) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<Linear>& aligns() { return aligns_; }
    std::vector<MlpBlock>& mlp_blocks() { return mlp_; }
    std::vector<TransBlock>& trans_blocks() { return trans_; }

private:
    FusionConfig config_;
    std::vector<std::size_t> input_dims_;
    std::size_t width_ = 0;
    std::size_t out_ = 0;
    std::vector<Linear> aligns_;
    std::vector<MlpBlock> mlp_;
    std::vector<TransBlock> trans_;
};

// ŷ = Linear(H_o)
Tensor predict(const Tensor& fused, const Linear& head);

}  // namespace histofuse
