#include "histofuse/fusion.hpp"

#include <algorithm>

#include "histofuse/errors.hpp"

namespace histofuse {

FusionMode parse_fusion_mode(std::string_view name) {
    if (name == "none") return FusionMode::none;
    if (name == "mlp") return FusionMode::mlp;
    if (name == "transformer" || name == "trans") return FusionMode::transformer;
    throw ParameterError("unknown fusion mode '" + std::string(name) + "' (expected none, mlp or transformer)");
}

std::string_view fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::none: return "none";
        case FusionMode::mlp: return "mlp";
        case FusionMode::transformer: return "transformer";
    }
    return "mlp";
}

AlignStrategy parse_align_strategy(std::string_view name) {
    if (name == "min" || name == "minimization") return AlignStrategy::minimization;
    if (name == "max" || name == "maximization") return AlignStrategy::maximization;
    if (name == "predefined") return AlignStrategy::predefined;
    throw ParameterError("unknown alignment strategy '" + std::string(name) +
                         "' (expected minimization, maximization or predefined)");
}

std::string_view align_strategy_name(AlignStrategy strategy) {
    switch (strategy) {
        case AlignStrategy::minimization: return "minimization";
        case AlignStrategy::maximization: return "maximization";
        case AlignStrategy::predefined: return "predefined";
    }
    return "minimization";
}

std::size_t choose_alignment_dim(std::span<const std::size_t> dims, AlignStrategy strategy, std::size_t predefined) {
    if (dims.empty()) throw DimensionError("alignment needs at least one input width");
    switch (strategy) {
        case AlignStrategy::minimization: return *std::min_element(dims.begin(), dims.end());
        case AlignStrategy::maximization: return *std::max_element(dims.begin(), dims.end());
        case AlignStrategy::predefined:
            if (predefined == 0) throw ParameterError("predefined alignment width must be positive");
            return predefined;
    }
    return predefined;
}

MlpBlock::MlpBlock(std::size_t in, std::size_t out, Activation act_, double dropout_, std::mt19937_64& rng)
    : linear(in, act_ == Activation::reglu ? 2 * out : out, rng), act(act_), dropout(dropout_) {
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
}

std::size_t MlpBlock::out_features() const {
    return act == Activation::reglu ? linear.out_features() / 2 : linear.out_features();
}

Tensor MlpBlock::operator()(const Tensor& x, Context& ctx) const {
    return histofuse::dropout(activation(act, linear(x)), dropout, ctx.rng, ctx.training);
}

void MlpBlock::collect(const std::string& prefix, ParamList& out) const { linear.collect(prefix + ".linear", out); }

Mhsa::Mhsa(std::size_t width, std::size_t heads_, std::mt19937_64& rng)
    : q(width, width, rng), k(width, width, rng), v(width, width, rng), o(width, width, rng), heads(heads_) {
    if (heads == 0 || width % heads != 0) {
        throw DimensionError("attention width " + std::to_string(width) + " is not divisible by " +
                             std::to_string(heads) + " heads");
    }
}

Tensor Mhsa::operator()(const Tensor& h) const { return o(attention(q(h), k(h), v(h), heads)); }

void Mhsa::collect(const std::string& prefix, ParamList& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
}

TransBlock::TransBlock(std::size_t width, std::size_t heads, Activation act, double dropout, std::mt19937_64& rng)
    : norm1(width), attention(width, heads, rng), norm2(width), mlp(width, width, act, dropout, rng) {}

Tensor TransBlock::operator()(const Tensor& h, Context& ctx) const {
    const Tensor h1 = add(h, attention(norm1(h)));
    return add(h1, mlp(norm2(h1), ctx));
}

void TransBlock::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".norm1", out);
    attention.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

Tensor mlp_fuse(std::span<const Tensor> inputs, std::span<const MlpBlock> blocks, Context& ctx) {
    if (inputs.empty()) throw DimensionError("fusion needs at least one input representation");
    Tensor h = inputs.size() == 1 ? inputs[0] : concat(inputs, 1);
    for (const MlpBlock& b : blocks) h = b(h, ctx);
    return h;
}

Tensor transformer_fuse(std::span<const Tensor> inputs, std::span<const Linear> aligns,
                        std::span<const TransBlock> blocks, Context& ctx) {
    if (inputs.empty()) throw DimensionError("fusion needs at least one input representation");
    if (aligns.size() != inputs.size()) throw DimensionError("one alignment layer per input is required");
    std::vector<Tensor> tokens;
    tokens.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor a = aligns[i](inputs[i]);
        tokens.push_back(reshape(a, {a.dim(0), 1, a.dim(1)}));
    }
    Tensor h = tokens.size() == 1 ? tokens[0] : concat(tokens, 1);
    for (const TransBlock& b : blocks) h = b(h, ctx);
    return mean_axis(h, 1);
}

FusionLayer::FusionLayer(const FusionConfig& config, std::vector<std::size_t> input_dims, std::mt19937_64& rng)
    : config_(config), input_dims_(std::move(input_dims)) {
    if (input_dims_.empty()) throw DimensionError("fusion needs at least one input representation");
    std::size_t total = 0;
    for (std::size_t d : input_dims_) total += d;
    switch (config.mode) {
        case FusionMode::none:
            out_ = total;
            break;
        case FusionMode::mlp: {
            if (config.blocks == 0) throw ParameterError("fusion needs at least one block");
            std::size_t in = total;
            for (std::size_t b = 0; b < config.blocks; ++b) {
                mlp_.emplace_back(in, config.mlp_width, config.mlp_activation, config.dropout, rng);
                in = config.mlp_width;
            }
            out_ = config.mlp_width;
            break;
        }
        case FusionMode::transformer: {
            if (config.blocks == 0) throw ParameterError("fusion needs at least one block");
            width_ = choose_alignment_dim(input_dims_, config.align, config.predefined_dim);
            if (config.heads == 0 || width_ % config.heads != 0) {
                throw DimensionError("aligned width " + std::to_string(width_) + " is not divisible by " +
                                     std::to_string(config.heads) + " heads");
            }
            for (std::size_t d : input_dims_) aligns_.emplace_back(d, width_, rng);
            for (std::size_t b = 0; b < config.blocks; ++b) {
                trans_.emplace_back(width_, config.heads, config.block_activation, config.dropout, rng);
            }
            out_ = width_;
            break;
        }
    }
}

Tensor FusionLayer::forward(std::span<const Tensor> inputs, Context& ctx) const {
    if (inputs.size() != input_dims_.size()) throw DimensionError("fusion input count mismatch");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].rank() != 2 || inputs[i].dim(1) != input_dims_[i]) {
            throw DimensionError("fusion input " + std::to_string(i) + " must be [B, " +
                                 std::to_string(input_dims_[i]) + "], got " + shape_str(inputs[i].shape()));
        }
    }
    switch (config_.mode) {
        case FusionMode::none: return inputs.size() == 1 ? inputs[0] : concat(inputs, 1);
        case FusionMode::mlp: return mlp_fuse(inputs, mlp_, ctx);
        case FusionMode::transformer: return transformer_fuse(inputs, aligns_, trans_, ctx);
    }
    return inputs[0];
}

void FusionLayer::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < aligns_.size(); ++i) aligns_[i].collect(prefix + ".align" + std::to_string(i), out);
    for (std::size_t i = 0; i < mlp_.size(); ++i) mlp_[i].collect(prefix + ".mlp" + std::to_string(i), out);
    for (std::size_t i = 0; i < trans_.size(); ++i) trans_[i].collect(prefix + ".block" + std::to_string(i), out);
}

Tensor predict(const Tensor& fused, const Linear& head) {
    if (fused.shape().back() != head.in_features()) throw DimensionError("prediction head width mismatch");
    return head(fused);
}

}  // namespace histofuse
