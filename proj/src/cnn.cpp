#include "histofuse/cnn.hpp"

#include "histofuse/errors.hpp"

namespace histofuse {

Tensor residual_block(const Tensor& h, const Conv2d& conv) {
    Tensor c = conv(h);
    if (c.shape() != h.shape()) {
        throw ContractError("residual_block: convolution maps " + shape_str(h.shape()) + " to " +
                            shape_str(c.shape()));
    }
    return relu(add(c, h));
}

Tensor dense_block(std::span<const Tensor> inputs, const Conv2d& conv) {
    if (inputs.empty()) throw DimensionError("dense_block: no inputs");
    for (const Tensor& t : inputs) {
        if (t.rank() != 4 || t.dim(0) != inputs[0].dim(0) || t.dim(2) != inputs[0].dim(2) ||
            t.dim(3) != inputs[0].dim(3)) {
            throw DimensionError("dense_block: inputs must share batch and spatial extent");
        }
    }
    return relu(conv(inputs.size() == 1 ? inputs[0] : concat(inputs, 1)));
}

CnnKind parse_cnn_kind(std::string_view name) {
    if (name == "plain" || name == "lenet") return CnnKind::plain;
    if (name == "residual" || name == "resnet") return CnnKind::residual;
    if (name == "dense" || name == "densenet") return CnnKind::dense;
    throw ParameterError("unknown image backbone '" + std::string(name) + "' (expected plain, residual or dense)");
}

std::string_view cnn_kind_name(CnnKind kind) {
    switch (kind) {
        case CnnKind::plain: return "plain";
        case CnnKind::residual: return "residual";
        case CnnKind::dense: return "dense";
    }
    return "plain";
}

CnnBranch::CnnBranch(const CnnConfig& config, std::mt19937_64& rng) : config_(config) {
    if (config.in_channels == 0 || config.width == 0 || config.out == 0) {
        throw ParameterError("image branch widths must be positive");
    }
    const std::size_t w = config.width;
    std::size_t features = 0;
    switch (config.kind) {
        case CnnKind::plain:
            convs_.emplace_back(config.in_channels, w, 5, 1, 2, rng);
            convs_.emplace_back(w, 2 * w, 5, 1, 2, rng);
            features = 2 * w;
            break;
        case CnnKind::residual:
            convs_.emplace_back(config.in_channels, w, 3, 1, 1, rng);
            for (std::size_t b = 0; b < config.blocks; ++b) convs_.emplace_back(w, w, 3, 1, 1, rng);
            features = w;
            break;
        case CnnKind::dense:
            convs_.emplace_back(config.in_channels, w, 3, 1, 1, rng);
            for (std::size_t b = 0; b < config.blocks; ++b) convs_.emplace_back(w * (b + 1), w, 3, 1, 1, rng);
            features = w * (config.blocks + 1);
            break;
    }
    fc_ = Linear(features, config.out, rng);
}

Tensor CnnBranch::forward(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
        throw DimensionError("image branch expects [B, " + std::to_string(config_.in_channels) + ", H, W], got " +
                             shape_str(images.shape()));
    }
    Tensor h;
    switch (config_.kind) {
        case CnnKind::plain:
            h = avg_pool2d(relu(convs_[0](images)), 2);
            h = avg_pool2d(relu(convs_[1](h)), 2);
            break;
        case CnnKind::residual:
            h = avg_pool2d(relu(convs_[0](images)), 2);
            for (std::size_t b = 1; b < convs_.size(); ++b) h = residual_block(h, convs_[b]);
            break;
        case CnnKind::dense: {
            std::vector<Tensor> maps{avg_pool2d(relu(convs_[0](images)), 2)};
            for (std::size_t b = 1; b < convs_.size(); ++b) maps.push_back(dense_block(maps, convs_[b]));
            h = concat(maps, 1);
            break;
        }
    }
    return fc_(global_avg_pool(h));
}

void CnnBranch::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
    fc_.collect(prefix + ".fc", out);
}

Tensor image_embed(const Tensor& image, const CnnBranch& branch) {
    if (image.rank() != 3) throw DimensionError("image_embed expects [C, H, W]");
    Shape batched{1, image.dim(0), image.dim(1), image.dim(2)};
    return reshape(branch.forward(reshape(image, batched)), {branch.out_features()});
}

}  // namespace histofuse
