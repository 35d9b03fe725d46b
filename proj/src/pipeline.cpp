#include "histofuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "histofuse/errors.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/optim.hpp"
#include "histofuse/textio.hpp"

namespace histofuse {

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ParameterError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    const std::string text = textio::read_file(path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string_view p) {
        std::filesystem::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).string();
    };
    std::vector<ManifestEntry> out;
    std::size_t line = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view row(text.data() + pos, end - pos);
        pos = end + 1;
        ++line;
        if (const auto hash = row.find('#'); hash != std::string_view::npos) row = row.substr(0, hash);
        std::vector<std::string_view> tokens;
        std::size_t i = 0;
        while (i < row.size()) {
            while (i < row.size() && std::isspace(static_cast<unsigned char>(row[i]))) ++i;
            std::size_t j = i;
            while (j < row.size() && !std::isspace(static_cast<unsigned char>(row[j]))) ++j;
            if (j > i) tokens.push_back(row.substr(i, j - i));
            i = j;
        }
        if (tokens.empty()) continue;
        if (tokens.size() != 3) throw ParseError(line, "manifest line must be '<bundle> <graph> <split>'");
        ManifestEntry e;
        e.bundle_path = resolve(tokens[0]);
        e.graph_path = resolve(tokens[1]);
        try {
            e.split = parse_split(tokens[2]);
        } catch (const ParameterError& err) {
            throw ParseError(line, err.what());
        }
        out.push_back(std::move(e));
    }
    return out;
}

Sample make_sample(const PatchBundle& bundle, const CellGraph& graph) {
    if (bundle.patch_id != graph.patch_id) {
        throw InputError("bundle " + bundle.patch_id + " is paired with graph " + graph.patch_id);
    }
    if (bundle.patient_id != graph.patient_id || bundle.label != graph.label) {
        throw InputError("patch " + bundle.patch_id + ": bundle and graph disagree on patient or label");
    }
    Sample s;
    s.patch_id = bundle.patch_id;
    s.patient_id = bundle.patient_id;
    s.label = bundle.label;
    s.channels = 1;
    s.height = bundle.height;
    s.width = bundle.width;
    s.image.reserve(bundle.gray.size());
    for (int v : bundle.gray) s.image.push_back(static_cast<double>(v) / 255.0);
    s.graph = to_graph_data(graph);
    return s;
}

Sample load_sample(const ManifestEntry& entry) {
    return make_sample(read_bundle_file(entry.bundle_path), read_graph_file(entry.graph_path));
}

Dataset load_dataset(const std::string& manifest_path) { return load_dataset(read_manifest(manifest_path)); }

Dataset load_dataset(const std::vector<ManifestEntry>& entries) {
    Dataset d;
    for (const ManifestEntry& e : entries) {
        Sample s = load_sample(e);
        switch (e.split) {
            case Split::train: d.train.push_back(std::move(s)); break;
            case Split::val: d.val.push_back(std::move(s)); break;
            case Split::test: d.test.push_back(std::move(s)); break;
        }
    }
    return d;
}

FeatureScaler FeatureScaler::fit(const std::vector<Sample>& samples) {
    FeatureScaler s;
    if (samples.empty()) return s;
    const std::size_t f = samples.front().graph.features;
    std::vector<double> sum(f, 0.0);
    std::size_t count = 0;
    for (const Sample& smp : samples) {
        if (smp.graph.features != f) throw DimensionError("graphs differ in feature width");
        for (std::size_t n = 0; n < smp.graph.nodes; ++n) {
            for (std::size_t k = 0; k < f; ++k) sum[k] += smp.graph.x[n * f + k];
        }
        count += smp.graph.nodes;
    }
    s.mean.resize(f);
    for (std::size_t k = 0; k < f; ++k) s.mean[k] = sum[k] / static_cast<double>(count);
    std::vector<double> sq(f, 0.0);
    for (const Sample& smp : samples) {
        for (std::size_t n = 0; n < smp.graph.nodes; ++n) {
            for (std::size_t k = 0; k < f; ++k) {
                const double d = smp.graph.x[n * f + k] - s.mean[k];
                sq[k] += d * d;
            }
        }
    }
    s.scale.resize(f);
    for (std::size_t k = 0; k < f; ++k) {
        const double sd = std::sqrt(sq[k] / static_cast<double>(count));
        s.scale[k] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
}

void FeatureScaler::apply(GraphData& graph) const {
    if (empty()) return;
    if (graph.features != mean.size()) throw DimensionError("feature scaler width mismatch");
    for (std::size_t n = 0; n < graph.nodes; ++n) {
        for (std::size_t k = 0; k < graph.features; ++k) {
            double& v = graph.x[n * graph.features + k];
            v = (v - mean[k]) * scale[k];
        }
    }
}

void FeatureScaler::store(FusionModel& model) const {
    model.buffers["graph.feature_mean"] = mean;
    model.buffers["graph.feature_scale"] = scale;
}

FeatureScaler FeatureScaler::load(const FusionModel& model) {
    FeatureScaler s;
    auto m = model.buffers.find("graph.feature_mean");
    auto c = model.buffers.find("graph.feature_scale");
    if (m != model.buffers.end() && c != model.buffers.end()) {
        s.mean = m->second;
        s.scale = c->second;
    }
    return s;
}

Batch make_batch(const std::vector<const Sample*>& samples, const FeatureScaler& scaler) {
    if (samples.empty()) throw ContractError("empty batch");
    const Sample& first = *samples.front();
    Batch b;
    std::vector<double> pixels;
    pixels.reserve(samples.size() * first.image.size());
    std::vector<GraphData> graphs;
    graphs.reserve(samples.size());
    for (const Sample* s : samples) {
        if (s->channels != first.channels || s->height != first.height || s->width != first.width) {
            throw DimensionError("patch " + s->patch_id + " differs in image size from " + first.patch_id);
        }
        pixels.insert(pixels.end(), s->image.begin(), s->image.end());
        graphs.push_back(s->graph);
        scaler.apply(graphs.back());
        b.labels.push_back(s->label);
    }
    b.images = Tensor::from({samples.size(), first.channels, first.height, first.width}, std::move(pixels));
    std::vector<const GraphData*> ptrs;
    for (const GraphData& g : graphs) ptrs.push_back(&g);
    b.graphs = make_graph_batch(ptrs);
    return b;
}

Sample augment(const Sample& sample, std::uint64_t seed, double max_shift) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    Sample out = sample;
    const std::size_t h = sample.height;
    const std::size_t w = sample.width;
    const bool flip_h = coin(rng);
    const bool flip_v = coin(rng);
    for (std::size_t c = 0; c < sample.channels; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                const std::size_t sr = flip_v ? h - 1 - r : r;
                const std::size_t sc = flip_h ? w - 1 - col : col;
                out.image[(c * h + r) * w + col] = sample.image[(c * h + sr) * w + sc];
            }
        }
    }
    if (max_shift > 0.0 && out.graph.features >= 2) {
        std::uniform_real_distribution<double> shift(-max_shift, max_shift);
        for (std::size_t n = 0; n < out.graph.nodes; ++n) {
            out.graph.x[n * out.graph.features] += shift(rng);
            out.graph.x[n * out.graph.features + 1] += shift(rng);
        }
    }
    return out;
}

namespace {

std::vector<std::vector<double>> snapshot(const ParamList& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
    }
}

template <typename Fn>
void for_each_batch(const std::vector<Sample>& samples, std::size_t batch_size, Fn&& fn) {
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<const Sample*> chunk;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) chunk.push_back(&samples[i]);
        fn(chunk);
    }
}

Tensor forward_batch(const FusionModel& model, const Batch& batch, Context& ctx) {
    return model.forward(model.uses_images() ? batch.images : Tensor{},
                         model.uses_graphs() ? &batch.graphs : nullptr, ctx);
}

}  // namespace

TrainResult train(FusionModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (train_set.empty()) throw InputError("training split is empty");
    if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw ParameterError("batch size and epoch cap must be positive");
    if (!(cfg.lr_min <= cfg.lr_max) || cfg.lr_min < 0.0) throw ParameterError("need 0 <= lr_min <= lr_max");

    FeatureScaler scaler;
    if (model.uses_graphs()) {
        scaler = FeatureScaler::fit(train_set);
        scaler.store(model);
    }
    const ParamList params = model.parameters();
    AdamWOptions opts;
    opts.weight_decay = cfg.weight_decay;
    AdamW opt(params, opts);

    std::mt19937_64 rng(cfg.seed);
    Context ctx;
    ctx.training = true;
    ctx.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    auto best_values = snapshot(params);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.lr_max, cfg.lr_min, cfg.t_max);
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<Sample> augmented;
            std::vector<const Sample*> chunk;
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            if (cfg.augment) {
                augmented.reserve(stop - start);
                for (std::size_t i = start; i < stop; ++i) augmented.push_back(augment(train_set[order[i]], rng()));
                for (const Sample& s : augmented) chunk.push_back(&s);
            } else {
                for (std::size_t i = start; i < stop; ++i) chunk.push_back(&train_set[order[i]]);
            }
            const Batch batch = make_batch(chunk, scaler);
            const Tensor loss = cross_entropy(forward_batch(model, batch, ctx), batch.labels);
            opt.zero_grad();
            backward(loss);
            opt.step(lr);
            total += loss.item() * static_cast<double>(chunk.size());
        }
        const double train_loss = total / static_cast<double>(train_set.size());
        if (!std::isfinite(train_loss)) {
            throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
        }
        result.train_loss.push_back(train_loss);
        std::optional<double> val_loss;
        if (!val_set.empty()) {
            val_loss = evaluate_loss(model, val_set, cfg.batch_size);
            result.val_loss.push_back(*val_loss);
        }
        result.epochs_run = epoch + 1;
        const double monitored = val_loss.value_or(train_loss);
        if (monitored < best) {
            best = monitored;
            result.best_epoch = epoch;
            best_values = snapshot(params);
        }
        if (on_epoch) on_epoch(epoch, train_loss, val_loss);
        if (cfg.stop_below > 0.0 && train_loss < cfg.stop_below) break;
        if (epoch - result.best_epoch >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    restore(params, best_values);
    return result;
}

double evaluate_loss(const FusionModel& model, const std::vector<Sample>& samples, std::size_t batch_size) {
    if (samples.empty()) throw InputError("cannot evaluate an empty split");
    const FeatureScaler scaler = FeatureScaler::load(model);
    Context ctx;
    double total = 0.0;
    for_each_batch(samples, batch_size, [&](const std::vector<const Sample*>& chunk) {
        const Batch batch = make_batch(chunk, scaler);
        total += cross_entropy(forward_batch(model, batch, ctx), batch.labels).item() *
                 static_cast<double>(chunk.size());
    });
    return total / static_cast<double>(samples.size());
}

std::vector<double> predict_probabilities(const FusionModel& model, const std::vector<Sample>& samples,
                                          std::size_t batch_size) {
    const FeatureScaler scaler = FeatureScaler::load(model);
    Context ctx;
    std::vector<double> out;
    out.reserve(samples.size());
    for_each_batch(samples, batch_size, [&](const std::vector<const Sample*>& chunk) {
        const Batch batch = make_batch(chunk, scaler);
        const Tensor logits = forward_batch(model, batch, ctx);
        if (logits.dim(1) != 2) throw DimensionError("classification needs a 2-logit head");
        const Tensor p = softmax(logits);
        for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(p.at({i, 1}));
    });
    return out;
}

EvalReport evaluate_probabilities(const std::vector<Sample>& samples, const std::vector<double>& probabilities) {
    if (samples.size() != probabilities.size()) throw DimensionError("one probability per sample is required");
    if (samples.empty()) throw InputError("cannot evaluate an empty split");
    EvalReport r;
    std::vector<int> labels, predicted;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        labels.push_back(samples[i].label);
        predicted.push_back(probabilities[i] > 0.5 ? 1 : 0);
    }
    r.acc = accuracy(predicted, labels);
    try {
        r.auc = auc(probabilities, labels);
    } catch (const UndefinedMetricError&) {
    }

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) groups[samples[i].patient_id].push_back(i);
    std::vector<double> scores;
    std::vector<int> patient_labels;
    for (const auto& [patient, idx] : groups) {
        PatientRow row;
        row.patient_id = patient;
        row.patches = idx.size();
        row.label = samples[idx.front()].label;
        std::vector<double> probs;
        std::vector<int> votes;
        for (std::size_t i : idx) {
            if (samples[i].label != row.label) throw InputError("patient " + patient + " has patches with both labels");
            probs.push_back(probabilities[i]);
            votes.push_back(predicted[i]);
        }
        row.score = patient_score(probs);
        row.vote = majority_vote(votes);
        scores.push_back(row.score);
        patient_labels.push_back(row.label);
        r.patients.push_back(std::move(row));
    }
    try {
        r.auc_patient = auc(scores, patient_labels);
    } catch (const UndefinedMetricError&) {
    }
    return r;
}

EvalReport evaluate(const FusionModel& model, const std::vector<Sample>& samples) {
    return evaluate_probabilities(samples, predict_probabilities(model, samples));
}

std::string metrics_csv(const std::string& run, std::uint64_t seed, const EvalReport& report, bool header) {
    auto opt = [](const std::optional<double>& v) { return v ? textio::format_double(*v) : std::string("NA"); };
    std::string out = header ? "run,seed,acc,auc,auc_patient\n" : "";
    out += run + "," + std::to_string(seed) + "," + textio::format_double(report.acc) + "," + opt(report.auc) + "," +
           opt(report.auc_patient) + "\n";
    return out;
}

}  // namespace histofuse
