#include "histofuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "histofuse/errors.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/optim.hpp"
#include "histofuse/textio.hpp"

namespace histofuse::synth {

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = ax + t * dx - px;
    const double ey = ay + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

constexpr double kStrokeLength = 12.0;
constexpr double kStrokeSigma = 1.3;
constexpr double kStripeDepth = 0.4;

std::vector<double> render_image(std::mt19937_64& rng) {
    constexpr std::size_t n = kImageSize;
    std::uniform_real_distribution<double> centre(8.0, 20.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pattern(0, 2);

    // Two strokes of fixed length and width keep the ink mass nearly constant;
    // otherwise both teachers end up tracking brightness and become strongly correlated.
    std::vector<double> img(n * n, 0.0);
    for (int s = 0; s < 2; ++s) {
        const double cx = centre(rng), cy = centre(rng), th = angle(rng);
        const double dx = 0.5 * kStrokeLength * std::cos(th), dy = 0.5 * kStrokeLength * std::sin(th);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double d = segment_distance(static_cast<double>(c), static_cast<double>(r), cx - dx, cy - dy,
                                                  cx + dx, cy + dy);
                img[r * n + c] = std::max(img[r * n + c], std::exp(-d * d / (2.0 * kStrokeSigma * kStrokeSigma)));
            }
        }
    }
    // Period-2 stripes average out over a 4 × 4 cell, so the graph barely sees them.
    const int kind = pattern(rng);
    const double amp = unit(rng);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t phase = kind == 0 ? r : kind == 1 ? c : r + c;
            const double t = phase % 2 == 0 ? 1.0 : -1.0;
            img[r * n + c] *= (1.0 - kStripeDepth) + kStripeDepth * amp * t;
        }
    }
    return img;
}

Pair image_to_pair(std::vector<double> image) {
    if (image.size() != kImageSize * kImageSize) throw DimensionError("synthetic image must be 28 x 28");
    Pair p;
    p.graph.nodes = kGridSide * kGridSide;
    p.graph.features = 1;
    p.graph.x.assign(p.graph.nodes, 0.0);
    for (std::size_t gr = 0; gr < kGridSide; ++gr) {
        for (std::size_t gc = 0; gc < kGridSide; ++gc) {
            double s = 0.0;
            for (std::size_t r = 0; r < kCellSize; ++r) {
                for (std::size_t c = 0; c < kCellSize; ++c) {
                    s += image[(gr * kCellSize + r) * kImageSize + gc * kCellSize + c];
                }
            }
            p.graph.x[gr * kGridSide + gc] = s / static_cast<double>(kCellSize * kCellSize);
            const double half = 0.5 * static_cast<double>(kCellSize - 1);
            p.positions.push_back({static_cast<double>(gc * kCellSize) + half, static_cast<double>(gr * kCellSize) + half});
        }
    }
    const auto side = static_cast<long>(kGridSide);
    for (long r = 0; r < side; ++r) {
        for (long c = 0; c < side; ++c) {
            const auto i = static_cast<std::size_t>(r * side + c);
            for (long dr = 0; dr <= 1; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc <= 0) continue;
                    const long rr = r + dr;
                    const long cc = c + dc;
                    if (rr >= side || cc < 0 || cc >= side) continue;
                    p.graph.edges.push_back({i, static_cast<std::size_t>(rr * side + cc), 1.0});
                }
            }
        }
    }
    std::sort(p.graph.edges.begin(), p.graph.edges.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    p.image = std::move(image);
    return p;
}

Dataset generate_pairs(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ParameterError("need at least one synthetic pair");
    std::mt19937_64 rng(seed);
    Dataset d;
    d.pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) d.pairs.push_back(image_to_pair(render_image(rng)));
    return d;
}

GraphData model_graph(const Pair& pair) {
    GraphData g;
    g.nodes = pair.graph.nodes;
    g.features = 3;
    g.edges = pair.graph.edges;
    g.x.reserve(g.nodes * 3);
    const auto extent = static_cast<double>(kImageSize);
    for (std::size_t n = 0; n < g.nodes; ++n) {
        g.x.push_back(pair.graph.x[n]);
        g.x.push_back(pair.positions[n].x / extent);
        g.x.push_back(pair.positions[n].y / extent);
    }
    return g;
}

namespace {

CnnConfig student_cnn() {
    CnnConfig c;
    c.kind = CnnKind::plain;
    c.width = 4;
    c.out = 32;
    return c;
}

GnnConfig synthetic_gnn() {
    GnnConfig g;
    g.kind = GnnKind::gin;
    g.in_features = 3;
    g.hidden = 32;
    g.out = 16;
    g.layers = 2;
    g.pool_ratio = 1.0;
    return g;
}

struct PairBatch {
    Tensor images;
    GraphBatch graphs;
};

PairBatch make_pair_batch(const std::vector<const Pair*>& pairs, bool images, bool graphs) {
    PairBatch b;
    if (images) {
        std::vector<double> px;
        px.reserve(pairs.size() * kImageSize * kImageSize);
        for (const Pair* p : pairs) px.insert(px.end(), p->image.begin(), p->image.end());
        b.images = Tensor::from({pairs.size(), 1, kImageSize, kImageSize}, std::move(px));
    }
    if (graphs) {
        std::vector<GraphData> gs;
        gs.reserve(pairs.size());
        for (const Pair* p : pairs) gs.push_back(model_graph(*p));
        std::vector<const GraphData*> ptrs;
        for (const GraphData& g : gs) ptrs.push_back(&g);
        b.graphs = make_graph_batch(ptrs);
    }
    return b;
}

Tensor run_model(const FusionModel& model, const PairBatch& b, Context& ctx) {
    return model.forward(b.images, model.uses_graphs() ? &b.graphs : nullptr, ctx);
}

}  // namespace

ModelConfig image_teacher_config(std::uint64_t seed) {
    ModelConfig m;
    CnnConfig c;
    c.kind = CnnKind::residual;
    c.width = 8;
    c.blocks = 2;
    c.out = 16;
    m.cnns.push_back(c);
    m.fusion.mode = FusionMode::none;
    m.outputs = 1;
    m.seed = seed;
    return m;
}

ModelConfig graph_teacher_config(std::uint64_t seed) {
    ModelConfig m;
    m.gnns.push_back(synthetic_gnn());
    m.fusion.mode = FusionMode::none;
    m.outputs = 1;
    m.seed = seed;
    return m;
}

std::vector<double> predict(const FusionModel& model, const std::vector<const Pair*>& pairs, std::size_t batch_size) {
    Context ctx;
    std::vector<double> out;
    out.reserve(pairs.size());
    for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
        std::vector<const Pair*> chunk(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                       pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + batch_size)));
        const PairBatch b = make_pair_batch(chunk, model.uses_images(), model.uses_graphs());
        const Tensor y = run_model(model, b, ctx);
        for (double v : y.data()) out.push_back(v);
    }
    return out;
}

Teachers teacher_targets(const Dataset& data, std::size_t n_seeds, std::uint64_t seed) {
    if (n_seeds == 0) throw ParameterError("need at least one teacher seed");
    std::vector<const Pair*> all;
    for (const Pair& p : data.pairs) all.push_back(&p);
    Teachers t;
    t.f_cnn.assign(all.size(), 0.0);
    t.f_gnn.assign(all.size(), 0.0);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const FusionModel cnn(image_teacher_config(seed + s));
        const FusionModel gnn(graph_teacher_config(seed + s));
        const auto a = predict(cnn, all);
        const auto b = predict(gnn, all);
        for (std::size_t i = 0; i < all.size(); ++i) {
            t.f_cnn[i] += a[i];
            t.f_gnn[i] += b[i];
        }
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        t.f_cnn[i] /= static_cast<double>(n_seeds);
        t.f_gnn[i] /= static_cast<double>(n_seeds);
    }
    return t;
}

std::vector<double> normalize_targets(const std::vector<double>& values) {
    if (values.size() < 2) throw InputError("normalisation needs at least two values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw InputError("targets have zero spread");
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back((v - mean) / sd);
    return out;
}

std::vector<double> mix_targets(const std::vector<double>& f_cnn, const std::vector<double>& f_gnn, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    if (f_cnn.size() != f_gnn.size()) throw DimensionError("teacher target lengths differ");
    std::vector<double> y(f_cnn.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * f_cnn[i] + (1.0 - alpha) * f_gnn[i];
    return y;
}

std::vector<double> make_labels(const std::vector<double>& f_cnn, const std::vector<double>& f_gnn, double alpha) {
    return normalize_targets(mix_targets(f_cnn, f_gnn, alpha));
}

std::string_view student_name(Student s) {
    switch (s) {
        case Student::image: return "image";
        case Student::graph: return "graph";
        case Student::fusion: return "fusion";
    }
    return "image";
}

ModelConfig student_config(Student s, std::size_t fusion_blocks, std::uint64_t seed) {
    ModelConfig m;
    m.outputs = 1;
    m.seed = seed;
    m.fusion.mode = FusionMode::none;
    if (s != Student::graph) m.cnns.push_back(student_cnn());
    if (s != Student::image) m.gnns.push_back(synthetic_gnn());
    if (s == Student::fusion) {
        m.fusion.mode = FusionMode::mlp;
        m.fusion.blocks = fusion_blocks;
        m.fusion.mlp_width = 10;
        m.fusion.mlp_activation = Activation::leaky_relu;
        m.fusion.dropout = 0.1;
    }
    return m;
}

RegressionResult train_regressor(FusionModel& model, const std::vector<const Pair*>& train_pairs,
                                 const std::vector<double>& train_y, const std::vector<const Pair*>& test_pairs,
                                 const std::vector<double>& test_y, const RegressionConfig& cfg) {
    if (train_pairs.empty() || test_pairs.empty()) throw InputError("regression needs train and test pairs");
    if (train_pairs.size() != train_y.size() || test_pairs.size() != test_y.size()) {
        throw DimensionError("one target per pair is required");
    }
    const ParamList params = model.parameters();
    AdamWOptions opts;
    opts.weight_decay = cfg.weight_decay;
    AdamW opt(params, opts);
    std::mt19937_64 rng(cfg.seed);
    Context ctx;
    ctx.training = true;
    ctx.rng.seed(cfg.seed ^ 0x5851f42d4c957f2dULL);

    RegressionResult r;
    r.best_test_rmse = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<const Pair*> chunk;
            std::vector<double> target;
            for (std::size_t i = start; i < stop; ++i) {
                chunk.push_back(train_pairs[order[i]]);
                target.push_back(train_y[order[i]]);
            }
            const PairBatch b = make_pair_batch(chunk, model.uses_images(), model.uses_graphs());
            const Tensor loss = mse_loss(run_model(model, b, ctx), Tensor::from({chunk.size(), 1}, std::move(target)));
            opt.zero_grad();
            backward(loss);
            opt.step(cfg.lr);
        }
        const double e = rmse(predict(model, test_pairs), test_y);
        r.test_rmse.push_back(e);
        r.epochs_run = epoch + 1;
        if (e < r.best_test_rmse) {
            r.best_test_rmse = e;
            r.best_epoch = epoch;
        }
        if (epoch - r.best_epoch >= cfg.patience) break;
    }
    return r;
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const SweepProgress& progress) {
    if (cfg.alphas.empty()) throw ParameterError("sweep needs at least one alpha");
    for (double a : cfg.alphas) {
        if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    }
    if (cfg.runs == 0) throw ParameterError("sweep needs at least one run");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ParameterError("train fraction must lie in (0, 1)");

    const Dataset data = generate_pairs(cfg.pairs, cfg.seed);
    const Teachers teachers = teacher_targets(data, cfg.teachers, cfg.seed);
    const auto n_train = static_cast<std::size_t>(std::round(cfg.train_fraction * static_cast<double>(cfg.pairs)));
    if (n_train < 2 || cfg.pairs - n_train < 2) throw ParameterError("each split needs at least two pairs");

    std::vector<const Pair*> train_pairs, test_pairs;
    for (std::size_t i = 0; i < data.pairs.size(); ++i) (i < n_train ? train_pairs : test_pairs).push_back(&data.pairs[i]);
    auto slice = [](const std::vector<double>& v, std::size_t from, std::size_t to) {
        return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to));
    };
    // Teachers are standardised separately on each split.
    const auto cnn_train = normalize_targets(slice(teachers.f_cnn, 0, n_train));
    const auto cnn_test = normalize_targets(slice(teachers.f_cnn, n_train, cfg.pairs));
    const auto gnn_train = normalize_targets(slice(teachers.f_gnn, 0, n_train));
    const auto gnn_test = normalize_targets(slice(teachers.f_gnn, n_train, cfg.pairs));

    std::vector<SweepRow> rows;
    for (double alpha : cfg.alphas) {
        const auto y_train = make_labels(cnn_train, gnn_train, alpha);
        const auto y_test = make_labels(cnn_test, gnn_test, alpha);
        for (Student s : cfg.students) {
            for (std::size_t run = 0; run < cfg.runs; ++run) {
                const std::uint64_t run_seed = cfg.seed * 1000003ULL + 101ULL * (run + 1);
                FusionModel model(student_config(s, cfg.fusion_blocks, run_seed));
                RegressionConfig rc = cfg.train;
                rc.seed = run_seed;
                const RegressionResult res = train_regressor(model, train_pairs, y_train, test_pairs, y_test, rc);
                SweepRow row{alpha, s, run, res.best_test_rmse, res.epochs_run};
                if (progress) progress(row);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows) {
    std::map<std::pair<double, int>, std::vector<double>> groups;
    for (const SweepRow& r : rows) groups[{r.alpha, static_cast<int>(r.model)}].push_back(r.test_rmse);
    std::vector<SummaryRow> out;
    for (const auto& [key, v] : groups) {
        SummaryRow s;
        s.alpha = key.first;
        s.model = static_cast<Student>(key.second);
        s.runs = v.size();
        s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size()));
        out.push_back(s);
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "alpha,model,run,test_rmse\n";
    for (const SweepRow& r : rows) {
        out += textio::format_double(r.alpha) + "," + std::string(student_name(r.model)) + "," + std::to_string(r.run) +
               "," + textio::format_double(r.test_rmse) + "\n";
    }
    return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "alpha,model,runs,mean_rmse,std_rmse\n";
    for (const SummaryRow& r : rows) {
        out += textio::format_double(r.alpha) + "," + std::string(student_name(r.model)) + "," + std::to_string(r.runs) +
               "," + textio::format_double(r.mean) + "," + textio::format_double(r.std) + "\n";
    }
    return out;
}

std::string summary_dat(const std::vector<SummaryRow>& rows) {
    std::map<double, std::map<int, const SummaryRow*>> by_alpha;
    for (const SummaryRow& r : rows) by_alpha[r.alpha][static_cast<int>(r.model)] = &r;
    std::string out = "# alpha image_mean image_std graph_mean graph_std fusion_mean fusion_std\n";
    for (const auto& [alpha, models] : by_alpha) {
        out += textio::format_double(alpha);
        for (int m = 0; m < 3; ++m) {
            auto it = models.find(m);
            if (it == models.end()) {
                out += " NaN NaN";
            } else {
                out += " " + textio::format_double(it->second->mean) + " " + textio::format_double(it->second->std);
            }
        }
        out += "\n";
    }
    return out;
}

}  // namespace histofuse::synth
