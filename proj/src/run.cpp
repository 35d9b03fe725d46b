#include "histofuse/run.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include "histofuse/cellgraph.hpp"
#include "histofuse/errors.hpp"
#include "histofuse/textio.hpp"

namespace histofuse {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const std::string& why) {
    throw ParameterError("key '" + std::string(key) + "': " + why + " (got '" + std::string(value) + "')");
}

double to_double(std::string_view key, std::string_view value) {
    double v = 0.0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc{} || ptr != end) bad_value(key, value, "expected a number");
    return v;
}

std::uint64_t to_count(std::string_view key, std::string_view value) {
    std::uint64_t v = 0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc{} || ptr != end) bad_value(key, value, "expected a non-negative integer");
    return v;
}

bool to_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(key, value, "expected true or false");
}

std::vector<std::string_view> split_list(std::string_view value) {
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = value.find(',');
        out.push_back(trim(value.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        value.remove_prefix(comma + 1);
    }
    return out;
}

template <typename Kind, typename Parse>
std::vector<Kind> to_kinds(std::string_view key, std::string_view value, Parse parse) {
    std::vector<Kind> kinds;
    if (value == "none") return kinds;
    for (std::string_view item : split_list(value)) {
        try {
            kinds.push_back(parse(item));
        } catch (const std::exception& e) {
            bad_value(key, value, e.what());
        }
    }
    return kinds;
}

template <typename Kind, typename Name>
std::string kinds_text(const std::vector<Kind>& kinds, Name name) {
    if (kinds.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        if (i) out += ',';
        out += name(kinds[i]);
    }
    return out;
}

template <typename Parse>
auto parse_named(std::string_view key, std::string_view value, Parse parse) {
    try {
        return parse(value);
    } catch (const std::exception& e) {
        bad_value(key, value, e.what());
    }
}

struct KeySpec {
    const char* key;
    const char* help;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string num(double v) { return textio::format_double(v); }

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = [] {
        std::vector<KeySpec> t;
        auto add = [&](const char* key, const char* help, auto set, auto get) {
            t.push_back({key, help, set, get});
        };
        add("manifest", "dataset manifest (`bundle graph split` lines)",
            [](RunConfig& c, std::string_view v) { c.manifest = std::string(v); },
            [](const RunConfig& c) { return c.manifest; });
        add("checkpoint", "where the trained model is written",
            [](RunConfig& c, std::string_view v) { c.checkpoint = std::string(v); },
            [](const RunConfig& c) { return c.checkpoint; });
        add("metrics", "metrics CSV output path",
            [](RunConfig& c, std::string_view v) { c.metrics = std::string(v); },
            [](const RunConfig& c) { return c.metrics; });
        add("run", "run name written to the metrics CSV",
            [](RunConfig& c, std::string_view v) { c.run = std::string(v); },
            [](const RunConfig& c) { return c.run; });
        add("d_c", "critical distance in pixels for graph building; no default",
            [](RunConfig& c, std::string_view v) {
                const double d = to_double("d_c", v);
                if (!(d > 0.0)) bad_value("d_c", v, "must be positive");
                c.critical_distance = d;
            },
            [](const RunConfig& c) { return c.critical_distance ? num(*c.critical_distance) : std::string(); });
        add("n_bins", "gray-level bins for texture features",
            [](RunConfig& c, std::string_view v) {
                const auto b = to_count("n_bins", v);
                if (b < 2 || b > 4096) bad_value("n_bins", v, "must be in [2, 4096]");
                c.n_bins = static_cast<int>(b);
            },
            [](const RunConfig& c) { return std::to_string(c.n_bins); });
        add("seed", "seed for initialisation, shuffling and augmentation",
            [](RunConfig& c, std::string_view v) { c.seed = to_count("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); });

        add("train.lr_max", "peak learning rate of the cosine schedule",
            [](RunConfig& c, std::string_view v) { c.train.lr_max = to_double("train.lr_max", v); },
            [](const RunConfig& c) { return num(c.train.lr_max); });
        add("train.lr_min", "floor learning rate of the cosine schedule",
            [](RunConfig& c, std::string_view v) { c.train.lr_min = to_double("train.lr_min", v); },
            [](const RunConfig& c) { return num(c.train.lr_min); });
        add("train.t_max", "cosine half period in epochs",
            [](RunConfig& c, std::string_view v) { c.train.t_max = to_count("train.t_max", v); },
            [](const RunConfig& c) { return std::to_string(c.train.t_max); });
        add("train.weight_decay", "AdamW decoupled weight decay",
            [](RunConfig& c, std::string_view v) { c.train.weight_decay = to_double("train.weight_decay", v); },
            [](const RunConfig& c) { return num(c.train.weight_decay); });
        add("train.batch_size", "samples per mini-batch",
            [](RunConfig& c, std::string_view v) { c.train.batch_size = to_count("train.batch_size", v); },
            [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
        add("train.max_epochs", "epoch cap",
            [](RunConfig& c, std::string_view v) { c.train.max_epochs = to_count("train.max_epochs", v); },
            [](const RunConfig& c) { return std::to_string(c.train.max_epochs); });
        add("train.patience", "epochs without improvement before stopping",
            [](RunConfig& c, std::string_view v) { c.train.patience = to_count("train.patience", v); },
            [](const RunConfig& c) { return std::to_string(c.train.patience); });
        add("train.augment", "random flips and node-location jitter",
            [](RunConfig& c, std::string_view v) { c.train.augment = to_bool("train.augment", v); },
            [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); });

        add("cnn", "image branches: comma list of plain|residual|dense, or none",
            [](RunConfig& c, std::string_view v) { c.cnn_kinds = to_kinds<CnnKind>("cnn", v, parse_cnn_kind); },
            [](const RunConfig& c) { return kinds_text(c.cnn_kinds, cnn_kind_name); });
        add("cnn.width", "channels of the first convolution",
            [](RunConfig& c, std::string_view v) { c.cnn.width = to_count("cnn.width", v); },
            [](const RunConfig& c) { return std::to_string(c.cnn.width); });
        add("cnn.blocks", "residual or dense blocks",
            [](RunConfig& c, std::string_view v) { c.cnn.blocks = to_count("cnn.blocks", v); },
            [](const RunConfig& c) { return std::to_string(c.cnn.blocks); });
        add("cnn.out", "image embedding width",
            [](RunConfig& c, std::string_view v) { c.cnn.out = to_count("cnn.out", v); },
            [](const RunConfig& c) { return std::to_string(c.cnn.out); });

        add("gnn", "graph branches: comma list of gcn|gin, or none",
            [](RunConfig& c, std::string_view v) { c.gnn_kinds = to_kinds<GnnKind>("gnn", v, parse_gnn_kind); },
            [](const RunConfig& c) { return kinds_text(c.gnn_kinds, gnn_kind_name); });
        add("gnn.hidden", "hidden width of every graph convolution",
            [](RunConfig& c, std::string_view v) { c.gnn.hidden = to_count("gnn.hidden", v); },
            [](const RunConfig& c) { return std::to_string(c.gnn.hidden); });
        add("gnn.out", "graph embedding width",
            [](RunConfig& c, std::string_view v) { c.gnn.out = to_count("gnn.out", v); },
            [](const RunConfig& c) { return std::to_string(c.gnn.out); });
        add("gnn.layers", "graph convolution layers, each followed by TopK pooling",
            [](RunConfig& c, std::string_view v) { c.gnn.layers = to_count("gnn.layers", v); },
            [](const RunConfig& c) { return std::to_string(c.gnn.layers); });
        add("gnn.pool_ratio", "fraction of nodes kept by each TopK pooling",
            [](RunConfig& c, std::string_view v) { c.gnn.pool_ratio = to_double("gnn.pool_ratio", v); },
            [](const RunConfig& c) { return num(c.gnn.pool_ratio); });

        add("fusion.mode", "none|mlp|transformer",
            [](RunConfig& c, std::string_view v) { c.fusion.mode = parse_named("fusion.mode", v, parse_fusion_mode); },
            [](const RunConfig& c) { return std::string(fusion_mode_name(c.fusion.mode)); });
        add("fusion.blocks", "number of MLP or transformer blocks",
            [](RunConfig& c, std::string_view v) { c.fusion.blocks = to_count("fusion.blocks", v); },
            [](const RunConfig& c) { return std::to_string(c.fusion.blocks); });
        add("fusion.align", "minimization|maximization|predefined",
            [](RunConfig& c, std::string_view v) {
                c.fusion.align = parse_named("fusion.align", v, parse_align_strategy);
            },
            [](const RunConfig& c) { return std::string(align_strategy_name(c.fusion.align)); });
        add("fusion.predefined_dim", "token width under predefined alignment",
            [](RunConfig& c, std::string_view v) { c.fusion.predefined_dim = to_count("fusion.predefined_dim", v); },
            [](const RunConfig& c) { return std::to_string(c.fusion.predefined_dim); });
        add("fusion.mlp_width", "width of every MLP fusion block",
            [](RunConfig& c, std::string_view v) { c.fusion.mlp_width = to_count("fusion.mlp_width", v); },
            [](const RunConfig& c) { return std::to_string(c.fusion.mlp_width); });
        add("fusion.heads", "attention heads per transformer block",
            [](RunConfig& c, std::string_view v) { c.fusion.heads = to_count("fusion.heads", v); },
            [](const RunConfig& c) { return std::to_string(c.fusion.heads); });
        add("fusion.dropout", "dropout rate inside fusion blocks",
            [](RunConfig& c, std::string_view v) { c.fusion.dropout = to_double("fusion.dropout", v); },
            [](const RunConfig& c) { return num(c.fusion.dropout); });
        add("fusion.mlp_activation", "activation of MLP fusion blocks",
            [](RunConfig& c, std::string_view v) {
                c.fusion.mlp_activation = parse_named("fusion.mlp_activation", v, parse_activation);
            },
            [](const RunConfig& c) { return std::string(activation_name(c.fusion.mlp_activation)); });
        add("fusion.block_activation", "activation inside transformer blocks",
            [](RunConfig& c, std::string_view v) {
                c.fusion.block_activation = parse_named("fusion.block_activation", v, parse_activation);
            },
            [](const RunConfig& c) { return std::string(activation_name(c.fusion.block_activation)); });
        return t;
    }();
    return table;
}

const KeySpec* find_key(std::string_view key) {
    for (const KeySpec& k : key_table()) {
        if (key == k.key) return &k;
    }
    return nullptr;
}

}  // namespace

std::vector<ConfigKey> run_config_reference() {
    const RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const KeySpec& k : key_table()) out.push_back({k.key, k.get(defaults), k.help});
    return out;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ParameterError("unknown key '" + std::string(key) + "'");
    if (value.empty()) throw ParameterError("key '" + std::string(key) + "': empty value");
    spec->set(config, value);
}

std::string get_config_value(const RunConfig& config, std::string_view key) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ParameterError("unknown key '" + std::string(key) + "'");
    return spec->get(config);
}

RunConfig parse_run_config(std::string_view text) {
    RunConfig config;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected `key = value`, got '" + std::string(line) + "'");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(line_no, "missing key before '='");
        if (!seen.insert(std::string(key)).second) {
            throw ParseError(line_no, "key '" + std::string(key) + "' given twice");
        }
        try {
            set_config_value(config, key, value);
        } catch (const ParameterError& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return config;
}

RunConfig read_run_config(const std::string& path) { return parse_run_config(textio::read_file(path)); }

std::string format_run_config(const RunConfig& config) {
    std::string out;
    for (const KeySpec& k : key_table()) {
        const std::string v = k.get(config);
        if (v.empty()) continue;
        out += k.key;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

void validate(const RunConfig& c) {
    auto fail = [](const char* key, const std::string& why) {
        throw ParameterError("key '" + std::string(key) + "': " + why);
    };
    if (!(c.train.lr_max > 0.0)) fail("train.lr_max", "must be positive");
    if (c.train.lr_min < 0.0 || c.train.lr_min > c.train.lr_max) fail("train.lr_min", "must lie in [0, train.lr_max]");
    if (c.train.t_max == 0) fail("train.t_max", "must be positive");
    if (c.train.weight_decay < 0.0) fail("train.weight_decay", "must be non-negative");
    if (c.train.batch_size == 0) fail("train.batch_size", "must be positive");
    if (c.train.max_epochs == 0) fail("train.max_epochs", "must be positive");
    if (c.train.patience == 0) fail("train.patience", "must be positive");
    if (c.cnn_kinds.empty() && c.gnn_kinds.empty()) fail("cnn", "at least one of cnn and gnn must name a branch");
    if (c.cnn.width == 0) fail("cnn.width", "must be positive");
    if (c.cnn.out == 0) fail("cnn.out", "must be positive");
    if (c.gnn.hidden == 0) fail("gnn.hidden", "must be positive");
    if (c.gnn.out == 0) fail("gnn.out", "must be positive");
    if (c.gnn.layers == 0) fail("gnn.layers", "must be positive");
    if (!(c.gnn.pool_ratio > 0.0 && c.gnn.pool_ratio <= 1.0)) fail("gnn.pool_ratio", "must lie in (0, 1]");
    if (c.fusion.mode != FusionMode::none && c.fusion.blocks == 0) fail("fusion.blocks", "must be positive");
    if (c.fusion.mlp_width == 0) fail("fusion.mlp_width", "must be positive");
    if (c.fusion.heads == 0) fail("fusion.heads", "must be positive");
    if (!(c.fusion.dropout >= 0.0 && c.fusion.dropout < 1.0)) fail("fusion.dropout", "must lie in [0, 1)");
}

ModelConfig model_config(const RunConfig& config, std::size_t graph_features, std::size_t channels) {
    ModelConfig m;
    for (CnnKind kind : config.cnn_kinds) {
        CnnConfig c = config.cnn;
        c.kind = kind;
        c.in_channels = channels;
        m.cnns.push_back(c);
    }
    for (GnnKind kind : config.gnn_kinds) {
        GnnConfig g = config.gnn;
        g.kind = kind;
        g.in_features = graph_features;
        m.gnns.push_back(g);
    }
    m.fusion = config.fusion;
    m.outputs = 2;
    m.seed = config.seed;
    return m;
}

// --- graph building --------------------------------------------------------

std::string GraphBuildSummary::line() const {
    std::string out = "patches=" + std::to_string(patches) + " failed=" + std::to_string(failed);
    out += " min_nodes=" + std::to_string(min_nodes) + " avg_nodes=" + num(avg_nodes) +
           " max_nodes=" + std::to_string(max_nodes);
    out += " min_edges=" + std::to_string(min_edges) + " avg_edges=" + num(avg_edges) +
           " max_edges=" + std::to_string(max_edges);
    return out;
}

std::vector<std::string> list_bundles(const std::string& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw InputError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".bundle") out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

GraphBuildItem build_one(const std::string& bundle_path, const std::string& graph_path, double d_c, int n_bins) {
    GraphBuildItem item;
    item.bundle_path = bundle_path;
    item.graph_path = graph_path;
    try {
        const CellGraph g = build_graph(read_bundle_file(bundle_path), d_c, n_bins, &item.merged);
        write_graph_file(graph_path, g);
        item.nodes = g.node_count();
        item.edges = g.edge_count();
    } catch (const std::exception& e) {
        item.error = e.what();
    }
    return item;
}

}  // namespace

GraphBuildSummary build_graph_files(const std::vector<std::string>& bundles, const std::string& output_dir,
                                    double critical_distance, int n_bins, std::size_t jobs) {
    if (!(critical_distance > 0.0)) throw ParameterError("d_c must be positive");
    fs::create_directories(output_dir);
    GraphBuildSummary summary;
    summary.items.resize(bundles.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, bundles.size()));
    auto work = [&](std::size_t first) {
        for (std::size_t i = first; i < bundles.size(); i += workers) {
            const fs::path out = fs::path(output_dir) / (fs::path(bundles[i]).stem().string() + ".cellgraph");
            summary.items[i] = build_one(bundles[i], out.string(), critical_distance, n_bins);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }

    double node_sum = 0.0, edge_sum = 0.0;
    for (const GraphBuildItem& it : summary.items) {
        if (!it.error.empty()) {
            ++summary.failed;
            continue;
        }
        if (summary.patches == 0) {
            summary.min_nodes = summary.max_nodes = it.nodes;
            summary.min_edges = summary.max_edges = it.edges;
        }
        ++summary.patches;
        summary.min_nodes = std::min(summary.min_nodes, it.nodes);
        summary.max_nodes = std::max(summary.max_nodes, it.nodes);
        summary.min_edges = std::min(summary.min_edges, it.edges);
        summary.max_edges = std::max(summary.max_edges, it.edges);
        node_sum += static_cast<double>(it.nodes);
        edge_sum += static_cast<double>(it.edges);
    }
    if (summary.patches > 0) {
        summary.avg_nodes = node_sum / static_cast<double>(summary.patches);
        summary.avg_edges = edge_sum / static_cast<double>(summary.patches);
    }
    return summary;
}

std::string cache_dir() {
    const char* v = std::getenv("HISTOFUSE_CACHE_DIR");
    return v ? std::string(v) : std::string();
}

std::vector<ManifestEntry> resolve_graphs(std::vector<ManifestEntry> entries, std::optional<double> critical_distance,
                                          int n_bins) {
    const std::string cache = cache_dir();
    for (ManifestEntry& e : entries) {
        if (fs::exists(e.graph_path)) continue;
        std::string target = e.graph_path;
        if (!cache.empty()) {
            target = (fs::path(cache) / fs::path(e.graph_path).filename()).string();
            if (fs::exists(target)) {
                e.graph_path = target;
                continue;
            }
        }
        if (!critical_distance) {
            throw ParameterError("graph file " + e.graph_path +
                                 " is missing and building it needs d_c (config key d_c or flag --dc)");
        }
        if (const fs::path parent = fs::path(target).parent_path(); !parent.empty()) fs::create_directories(parent);
        const CellGraph g = build_graph(read_bundle_file(e.bundle_path), *critical_distance, n_bins);
        write_graph_file(target, g);
        e.graph_path = target;
    }
    return entries;
}

// --- runs ----------------------------------------------------------------------

TrainRunResult run_train(const RunConfig& config, const LogFn& log) {
    validate(config);
    if (config.manifest.empty()) throw ParameterError("key 'manifest': required for training");
    auto say = [&](const std::string& msg) {
        if (log) log(msg);
    };
    const auto entries = resolve_graphs(read_manifest(config.manifest), config.critical_distance, config.n_bins);
    const Dataset data = load_dataset(entries);
    if (data.train.empty()) throw InputError("manifest has no train samples");
    say("loaded train=" + std::to_string(data.train.size()) + " val=" + std::to_string(data.val.size()) +
        " test=" + std::to_string(data.test.size()));

    const Sample& first = data.train.front();
    FusionModel model(model_config(config, first.graph.features, first.channels));
    TrainConfig tc = config.train;
    tc.seed = config.seed;

    TrainRunResult result;
    result.training = train(model, data.train, data.val, tc, [&](std::size_t epoch, double loss, std::optional<double> val) {
        std::string msg = "epoch " + std::to_string(epoch + 1) + " train_loss=" + num(loss);
        if (val) msg += " val_loss=" + num(*val);
        say(msg);
    });
    save_checkpoint(config.checkpoint, model);
    say("saved " + config.checkpoint + " (best epoch " + std::to_string(result.training.best_epoch + 1) + ")");

    const std::vector<Sample>* split = &data.test;
    result.evaluated_split = "test";
    if (split->empty()) {
        split = data.val.empty() ? &data.train : &data.val;
        result.evaluated_split = data.val.empty() ? "train" : "val";
    }
    result.report = evaluate(model, *split);
    result.metrics_csv = metrics_csv(config.run, config.seed, result.report);
    textio::write_file(config.metrics, result.metrics_csv);
    return result;
}

EvalReport run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    std::optional<double> critical_distance, int n_bins) {
    const FusionModel model = load_checkpoint(checkpoint_path);
    const Dataset data = load_dataset(resolve_graphs(read_manifest(manifest_path), critical_distance, n_bins));
    std::vector<Sample> all;
    for (const auto* part : {&data.train, &data.val, &data.test}) all.insert(all.end(), part->begin(), part->end());
    if (all.empty()) throw InputError("manifest lists no samples");
    return evaluate(model, all);
}

}  // namespace histofuse
