#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/cnn.hpp"
#include "histofuse/fusion.hpp"
#include "histofuse/gnn.hpp"

namespace histofuse {

struct ModelConfig {
    std::vector<CnnConfig> cnns;
    std::vector<GnnConfig> gnns;
    FusionConfig fusion;
    std::size_t outputs = 2;  // 2 logits for classification, 1 for regression
    std::uint64_t seed = 0;   // parameter initialisation
};

// Image branches and graph branches in parallel, a fusion layer over their
// outputs, then a linear prediction head. Every image branch sees the same
// image batch and every graph branch the same graph batch.
class FusionModel {
public:
    FusionModel() = default;
    explicit FusionModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    bool uses_images() const { return !cnns_.empty(); }
    bool uses_graphs() const { return !gnns_.empty(); }

    // Branch outputs in fusion order: image branches first, then graph branches.
    std::vector<Tensor> embed(const Tensor& images, const GraphBatch* graphs) const;
    // [B, outputs]
    Tensor forward(const Tensor& images, const GraphBatch* graphs, Context& ctx) const;

    ParamList parameters() const;

    std::vector<CnnBranch>& cnns() { return cnns_; }
    std::vector<GnnBranch>& gnns() { return gnns_; }
    FusionLayer& fusion() { return fusion_; }
    Linear& head() { return head_; }

    // Non-trainable named vectors saved with the parameters (e.g. feature scaling).
    std::map<std::string, std::vector<double>> buffers;

private:
    ModelConfig config_;
    std::vector<CnnBranch> cnns_;
    std::vector<GnnBranch> gnns_;
    FusionLayer fusion_;
    Linear head_;
};

// Versioned text checkpoint: the architecture as key/value lines, then every
// buffer and named parameter tensor with its shape. Values use the shortest
// round-trip representation, so save → load is exact.
std::string serialize_checkpoint(const FusionModel& model);
FusionModel parse_checkpoint(std::string_view text);
void save_checkpoint(const std::string& path, const FusionModel& model);
FusionModel load_checkpoint(const std::string& path);

// Copies parameter values between models of identical architecture.
void copy_parameters(const FusionModel& from, FusionModel& to);

}  // namespace histofuse
