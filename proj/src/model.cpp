#include "histofuse/model.hpp"

#include <algorithm>
#include <random>

#include "histofuse/errors.hpp"
#include "histofuse/textio.hpp"

namespace histofuse {

FusionModel::FusionModel(const ModelConfig& config) : config_(config) {
    if (config.cnns.empty() && config.gnns.empty()) throw ParameterError("model needs at least one branch");
    if (config.outputs == 0) throw ParameterError("model needs at least one output");
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> dims;
    for (const CnnConfig& c : config.cnns) {
        cnns_.emplace_back(c, rng);
        dims.push_back(c.out);
    }
    for (const GnnConfig& g : config.gnns) {
        gnns_.emplace_back(g, rng);
        dims.push_back(g.out);
    }
    fusion_ = FusionLayer(config.fusion, dims, rng);
    head_ = Linear(fusion_.out_features(), config.outputs, rng);
}

std::vector<Tensor> FusionModel::embed(const Tensor& images, const GraphBatch* graphs) const {
    std::vector<Tensor> out;
    if (!cnns_.empty() && !images.defined()) throw ContractError("model has image branches but no images were given");
    if (!gnns_.empty() && graphs == nullptr) throw ContractError("model has graph branches but no graphs were given");
    for (const CnnBranch& c : cnns_) out.push_back(c.forward(images));
    for (const GnnBranch& g : gnns_) out.push_back(g.forward(*graphs));
    if (out.size() > 1) {
        for (const Tensor& t : out) {
            if (t.dim(0) != out[0].dim(0)) throw DimensionError("image and graph batches differ in size");
        }
    }
    return out;
}

Tensor FusionModel::forward(const Tensor& images, const GraphBatch* graphs, Context& ctx) const {
    const std::vector<Tensor> parts = embed(images, graphs);
    return predict(fusion_.forward(parts, ctx), head_);
}

ParamList FusionModel::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < cnns_.size(); ++i) cnns_[i].collect("cnn" + std::to_string(i), out);
    for (std::size_t i = 0; i < gnns_.size(); ++i) gnns_[i].collect("gnn" + std::to_string(i), out);
    fusion_.collect("fusion", out);
    head_.collect("head", out);
    return out;
}

void copy_parameters(const FusionModel& from, FusionModel& to) {
    const ParamList src = from.parameters();
    const ParamList dst = to.parameters();
    if (src.size() != dst.size()) throw ContractError("copy_parameters: architectures differ");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
            throw ContractError("copy_parameters: parameter " + src[i].first + " differs");
        }
        auto s = src[i].second.data();
        Tensor target = dst[i].second;
        std::copy(s.begin(), s.end(), target.mutable_data().begin());
    }
    to.buffers = from.buffers;
}

namespace {

constexpr std::string_view kMagic = "HISTOFUSE-CHECKPOINT";

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues config_entries(const ModelConfig& c) {
    KeyValues kv;
    auto num = [](double v) { return textio::format_double(v); };
    kv.emplace_back("outputs", std::to_string(c.outputs));
    kv.emplace_back("seed", std::to_string(c.seed));
    kv.emplace_back("fusion.mode", std::string(fusion_mode_name(c.fusion.mode)));
    kv.emplace_back("fusion.blocks", std::to_string(c.fusion.blocks));
    kv.emplace_back("fusion.align", std::string(align_strategy_name(c.fusion.align)));
    kv.emplace_back("fusion.predefined_dim", std::to_string(c.fusion.predefined_dim));
    kv.emplace_back("fusion.mlp_width", std::to_string(c.fusion.mlp_width));
    kv.emplace_back("fusion.heads", std::to_string(c.fusion.heads));
    kv.emplace_back("fusion.dropout", num(c.fusion.dropout));
    kv.emplace_back("fusion.mlp_activation", std::string(activation_name(c.fusion.mlp_activation)));
    kv.emplace_back("fusion.block_activation", std::string(activation_name(c.fusion.block_activation)));
    kv.emplace_back("cnn.count", std::to_string(c.cnns.size()));
    for (std::size_t i = 0; i < c.cnns.size(); ++i) {
        const std::string p = "cnn." + std::to_string(i) + ".";
        kv.emplace_back(p + "kind", std::string(cnn_kind_name(c.cnns[i].kind)));
        kv.emplace_back(p + "in_channels", std::to_string(c.cnns[i].in_channels));
        kv.emplace_back(p + "width", std::to_string(c.cnns[i].width));
        kv.emplace_back(p + "blocks", std::to_string(c.cnns[i].blocks));
        kv.emplace_back(p + "out", std::to_string(c.cnns[i].out));
    }
    kv.emplace_back("gnn.count", std::to_string(c.gnns.size()));
    for (std::size_t i = 0; i < c.gnns.size(); ++i) {
        const std::string p = "gnn." + std::to_string(i) + ".";
        kv.emplace_back(p + "kind", std::string(gnn_kind_name(c.gnns[i].kind)));
        kv.emplace_back(p + "in_features", std::to_string(c.gnns[i].in_features));
        kv.emplace_back(p + "hidden", std::to_string(c.gnns[i].hidden));
        kv.emplace_back(p + "out", std::to_string(c.gnns[i].out));
        kv.emplace_back(p + "layers", std::to_string(c.gnns[i].layers));
        kv.emplace_back(p + "pool_ratio", num(c.gnns[i].pool_ratio));
    }
    return kv;
}

}  // namespace

std::string serialize_checkpoint(const FusionModel& model) {
    std::string out = std::string(kMagic) + " v1\n";
    const KeyValues kv = config_entries(model.config());
    out += "CONFIG " + std::to_string(kv.size()) + "\n";
    for (const auto& [k, v] : kv) out += k + " " + v + "\n";
    out += "BUFFERS " + std::to_string(model.buffers.size()) + "\n";
    for (const auto& [name, values] : model.buffers) {
        out += name + " " + std::to_string(values.size());
        for (double v : values) {
            out += ' ';
            textio::append_double(out, v);
        }
        out += '\n';
    }
    const ParamList params = model.parameters();
    out += "PARAMS " + std::to_string(params.size()) + "\n";
    for (const auto& [name, t] : params) {
        out += name + " " + std::to_string(t.rank());
        for (std::size_t d : t.shape()) out += " " + std::to_string(d);
        for (double v : t.data()) {
            out += ' ';
            textio::append_double(out, v);
        }
        out += '\n';
    }
    return out;
}

FusionModel parse_checkpoint(std::string_view text) {
    textio::LineReader reader(text);
    auto header = reader.next("checkpoint header");
    if (header.size() != 2 || header[0] != kMagic || header[1] != "v1") {
        throw ParseError(reader.line(), "not a version 1 checkpoint");
    }
    auto count_line = [&](std::string_view tag) {
        auto t = reader.next(tag.data());
        if (t.size() != 2 || t[0] != tag) throw ParseError(reader.line(), "expected '" + std::string(tag) + " <n>'");
        return textio::parse_count(t[1], reader.line());
    };

    std::map<std::string, std::pair<std::string, std::size_t>> kv;
    const std::size_t n_config = count_line("CONFIG");
    for (std::size_t i = 0; i < n_config; ++i) {
        auto t = reader.next("config entry");
        if (t.size() != 2) throw ParseError(reader.line(), "config entry must be '<key> <value>'");
        kv[std::string(t[0])] = {std::string(t[1]), reader.line()};
    }
    auto get = [&](const std::string& key) -> std::pair<std::string, std::size_t> {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError(reader.line(), "checkpoint config lacks '" + key + "'");
        return it->second;
    };
    auto count = [&](const std::string& key) {
        auto [v, line] = get(key);
        return textio::parse_count(v, line);
    };
    auto real = [&](const std::string& key) {
        auto [v, line] = get(key);
        return textio::parse_double(v, line);
    };

    ModelConfig c;
    c.outputs = count("outputs");
    c.seed = count("seed");
    c.fusion.mode = parse_fusion_mode(get("fusion.mode").first);
    c.fusion.blocks = count("fusion.blocks");
    c.fusion.align = parse_align_strategy(get("fusion.align").first);
    c.fusion.predefined_dim = count("fusion.predefined_dim");
    c.fusion.mlp_width = count("fusion.mlp_width");
    c.fusion.heads = count("fusion.heads");
    c.fusion.dropout = real("fusion.dropout");
    c.fusion.mlp_activation = parse_activation(get("fusion.mlp_activation").first);
    c.fusion.block_activation = parse_activation(get("fusion.block_activation").first);
    const std::size_t n_cnn = count("cnn.count");
    for (std::size_t i = 0; i < n_cnn; ++i) {
        const std::string p = "cnn." + std::to_string(i) + ".";
        CnnConfig cc;
        cc.kind = parse_cnn_kind(get(p + "kind").first);
        cc.in_channels = count(p + "in_channels");
        cc.width = count(p + "width");
        cc.blocks = count(p + "blocks");
        cc.out = count(p + "out");
        c.cnns.push_back(cc);
    }
    const std::size_t n_gnn = count("gnn.count");
    for (std::size_t i = 0; i < n_gnn; ++i) {
        const std::string p = "gnn." + std::to_string(i) + ".";
        GnnConfig gc;
        gc.kind = parse_gnn_kind(get(p + "kind").first);
        gc.in_features = count(p + "in_features");
        gc.hidden = count(p + "hidden");
        gc.out = count(p + "out");
        gc.layers = count(p + "layers");
        gc.pool_ratio = real(p + "pool_ratio");
        c.gnns.push_back(gc);
    }

    FusionModel model(c);

    const std::size_t n_buffers = count_line("BUFFERS");
    for (std::size_t i = 0; i < n_buffers; ++i) {
        auto t = reader.next("buffer line");
        if (t.size() < 2) throw ParseError(reader.line(), "buffer line must be '<name> <n> <values...>'");
        const std::size_t n = textio::parse_count(t[1], reader.line());
        if (t.size() != 2 + n) throw ParseError(reader.line(), "buffer value count mismatch");
        std::vector<double> values(n);
        for (std::size_t k = 0; k < n; ++k) values[k] = textio::parse_double(t[2 + k], reader.line());
        model.buffers[std::string(t[0])] = std::move(values);
    }

    const ParamList params = model.parameters();
    const std::size_t n_params = count_line("PARAMS");
    if (n_params != params.size()) {
        throw ParseError(reader.line(), "checkpoint has " + std::to_string(n_params) + " parameters, model expects " +
                                            std::to_string(params.size()));
    }
    for (const auto& [name, tensor] : params) {
        auto t = reader.next("parameter line");
        if (t.size() < 2 || t[0] != name) throw ParseError(reader.line(), "expected parameter '" + name + "'");
        const std::size_t rank = textio::parse_count(t[1], reader.line());
        if (t.size() < 2 + rank) throw ParseError(reader.line(), "truncated parameter shape");
        Shape shape(rank);
        for (std::size_t k = 0; k < rank; ++k) shape[k] = textio::parse_count(t[2 + k], reader.line());
        if (shape != tensor.shape()) {
            throw ParseError(reader.line(), "parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                                shape_str(tensor.shape()));
        }
        if (t.size() != 2 + rank + tensor.numel()) throw ParseError(reader.line(), "parameter value count mismatch");
        auto dst = Tensor(tensor).mutable_data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = textio::parse_double(t[2 + rank + k], reader.line());
    }
    reader.expect_end();
    return model;
}

void save_checkpoint(const std::string& path, const FusionModel& model) {
    textio::write_file(path, serialize_checkpoint(model));
}

FusionModel load_checkpoint(const std::string& path) { return parse_checkpoint(textio::read_file(path)); }

}  // namespace histofuse
