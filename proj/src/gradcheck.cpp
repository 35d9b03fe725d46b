#include "histofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "histofuse/errors.hpp"
#include "histofuse/gnn.hpp"
#include "histofuse/model.hpp"
#include "histofuse/ops.hpp"

namespace histofuse {

GradientComparison compare_gradients(const GradFn& f, const std::vector<Tensor>& inputs, double h,
                                     std::mt19937_64& rng) {
    for (const Tensor& t : inputs) {
        if (!t.requires_grad()) throw ContractError("gradient_error: every input must require a gradient");
        Tensor(t).zero_grad();
    }
    const Tensor out = f(inputs);
    std::normal_distribution<double> normal;
    std::vector<double> projection(out.numel());
    for (double& v : projection) v = normal(rng);
    auto project = [&](const Tensor& o) {
        auto d = o.data();
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * projection[i];
        return s;
    };
    backward(sum(mul(out, Tensor::from(out.shape(), projection))));

    GradientComparison result;
    const double base = project(out);
    for (const Tensor& in : inputs) {
        Tensor t = in;
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto values = t.mutable_data();
        // f(x + s) - 2 f(x) + f(x - s) and the central difference for step s.
        auto probe = [&](std::size_t i, double step) {
            const double keep = values[i];
            values[i] = keep + step;
            const double up = project(f(inputs));
            values[i] = keep - step;
            const double down = project(f(inputs));
            values[i] = keep;
            return std::pair{up - 2.0 * base + down, (up - down) / (2.0 * step)};
        };
        double diff = 0.0, kink = 0.0, scale = kGradientFloor;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto [d1, numeric] = probe(i, h);
            const double d2 = probe(i, h / 2.0).first;
            const double d4 = probe(i, h / 4.0).first;
            // Second differences shrink as s^2 on smooth stretches but only as s
            // across a kink, so these residuals stay near zero unless one is crossed.
            kink = std::max({kink, std::abs(4.0 * d2 - d1) / h, std::abs(4.0 * d4 - d2) / (h / 2.0)});
            diff = std::max(diff, std::abs(analytic[i] - numeric));
            scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
        }
        result.error = std::max(result.error, diff / scale);
        if (kink / scale > kKinkThreshold) result.smooth = false;
    }
    return result;
}

double gradient_error(const GradFn& f, const std::vector<Tensor>& inputs, double h, std::mt19937_64& rng) {
    return compare_gradients(f, inputs, h, rng).error;
}

namespace {

constexpr std::size_t kMaxDraws = 10;

// Entries are kept at least `gap` away from zero so that piecewise-linear
// activations are not probed across their kink.
Tensor random_leaf(Shape shape, std::mt19937_64& rng, double gap = 0.0) {
    std::normal_distribution<double> normal;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) {
        x = normal(rng);
        if (gap > 0.0) x = std::copysign(std::abs(x) + gap, x);
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

CsrMatrix random_graph(std::size_t nodes, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> weight(0.2, 1.5);
    std::bernoulli_distribution link(0.5);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t j = i + 1; j < nodes; ++j) {
            if (link(rng)) edges.push_back({i, j, weight(rng)});
        }
    }
    return adjacency_from_edges(nodes, edges);
}

// Multiplies by two but reports 2.2 as the derivative.
Tensor faulty_double(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v *= 2.0;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        detail::Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        if (in.grad.size() != in.value.size()) in.grad.assign(in.value.size(), 0.0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += 2.2 * self.grad[i];
    });
}

struct Case {
    std::vector<Tensor> inputs;
    GradFn f;
};

using CaseFactory = std::function<Case(std::mt19937_64&)>;

Case unary_case(std::mt19937_64& rng, Shape shape, double gap, Tensor (*op)(const Tensor&)) {
    return {{random_leaf(std::move(shape), rng, gap)}, [op](const std::vector<Tensor>& in) { return op(in[0]); }};
}

Case model_case(std::mt19937_64& rng, CnnKind cnn, GnnKind gnn, FusionMode mode) {
    constexpr std::size_t features = 5;
    ModelConfig cfg;
    CnnConfig c;
    c.kind = cnn;
    c.width = 2;
    c.blocks = 1;
    c.out = 4;
    cfg.cnns.push_back(c);
    GnnConfig g;
    g.kind = gnn;
    g.in_features = features;
    g.hidden = 4;
    g.out = 3;
    cfg.gnns.push_back(g);
    cfg.fusion.mode = mode;
    cfg.fusion.mlp_width = 5;
    cfg.fusion.heads = 1;
    cfg.fusion.mlp_activation = Activation::gelu;
    cfg.seed = rng();
    auto model = std::make_shared<FusionModel>(cfg);

    std::normal_distribution<double> normal;
    auto graphs = std::make_shared<std::vector<GraphData>>();
    for (std::size_t k = 0; k < 2; ++k) {
        GraphData gd;
        gd.nodes = 3;
        gd.features = features;
        for (std::size_t i = 0; i < gd.nodes * features; ++i) gd.x.push_back(normal(rng));
        gd.edges = {{0, 1, 0.8}, {1, 2, 1.3}};
        graphs->push_back(std::move(gd));
    }
    auto batch = std::make_shared<GraphBatch>(make_graph_batch({&(*graphs)[0], &(*graphs)[1]}));
    std::vector<double> pixels(2 * 8 * 8);
    for (double& p : pixels) p = normal(rng);
    const Tensor images = Tensor::from({2, 1, 8, 8}, std::move(pixels));

    Case out;
    for (auto& [name, t] : model->parameters()) out.inputs.push_back(t);
    out.f = [model, batch, images](const std::vector<Tensor>&) {
        Context ctx;
        return model->forward(images, batch.get(), ctx);
    };
    return out;
}

std::vector<std::pair<std::string, CaseFactory>> suite(bool inject_fault) {
    std::vector<std::pair<std::string, CaseFactory>> s;
    auto check = [&](std::string name, CaseFactory f) { s.emplace_back(std::move(name), std::move(f)); };

    check("linear", [](std::mt19937_64& r) {
        return Case{{random_leaf({3, 4}, r), random_leaf({4, 5}, r), random_leaf({5}, r)},
                    [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); }};
    });
    check("matmul", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 3, 4}, r), random_leaf({4, 2}, r)},
                    [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }};
    });
    check("add", [](std::mt19937_64& r) {
        return Case{{random_leaf({3, 4}, r), random_leaf({3, 4}, r)},
                    [](const std::vector<Tensor>& in) { return add(in[0], in[1]); }};
    });
    check("sub", [](std::mt19937_64& r) {
        return Case{{random_leaf({3, 4}, r), random_leaf({3, 4}, r)},
                    [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }};
    });
    check("mul", [](std::mt19937_64& r) {
        return Case{{random_leaf({3, 4}, r), random_leaf({3, 4}, r)},
                    [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }};
    });
    check("scale", [](std::mt19937_64& r) {
        return Case{{random_leaf({7}, r)}, [](const std::vector<Tensor>& in) { return scale(in[0], -1.7); }};
    });
    check("relu", [](std::mt19937_64& r) { return unary_case(r, {4, 5}, 0.05, relu); });
    check("leaky_relu", [](std::mt19937_64& r) {
        return Case{{random_leaf({4, 5}, r, 0.05)}, [](const std::vector<Tensor>& in) { return leaky_relu(in[0]); }};
    });
    check("gelu", [](std::mt19937_64& r) { return unary_case(r, {4, 5}, 0.0, gelu); });
    check("tanh", [](std::mt19937_64& r) { return unary_case(r, {4, 5}, 0.0, tanh); });
    check("reglu", [](std::mt19937_64& r) { return unary_case(r, {3, 6}, 0.05, reglu); });
    check("layer_norm", [](std::mt19937_64& r) {
        return Case{{random_leaf({4, 5}, r), random_leaf({5}, r), random_leaf({5}, r)},
                    [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); }};
    });
    check("dropout", [](std::mt19937_64& r) {
        const std::uint64_t seed = r();
        return Case{{random_leaf({6, 5}, r)},
                    [seed](const std::vector<Tensor>& in) { return dropout(in[0], 0.3, seed, true); }};
    });
    check("softmax", [](std::mt19937_64& r) { return unary_case(r, {3, 4}, 0.0, softmax); });
    check("cross_entropy", [](std::mt19937_64& r) {
        std::uniform_int_distribution<int> label(0, 2);
        std::vector<int> labels(4);
        for (int& l : labels) l = label(r);
        return Case{{random_leaf({4, 3}, r)},
                    [labels](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); }};
    });
    check("mse_loss", [](std::mt19937_64& r) {
        return Case{{random_leaf({5}, r), random_leaf({5}, r)},
                    [](const std::vector<Tensor>& in) { return mse_loss(in[0], in[1]); }};
    });
    check("sum", [](std::mt19937_64& r) { return unary_case(r, {3, 4}, 0.0, sum); });
    check("mean", [](std::mt19937_64& r) { return unary_case(r, {3, 4}, 0.0, mean); });
    check("mean_axis", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 3, 4}, r)}, [](const std::vector<Tensor>& in) { return mean_axis(in[0], 1); }};
    });
    check("reshape", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 6}, r)},
                    [](const std::vector<Tensor>& in) { return mul(reshape(in[0], {3, 4}), reshape(in[0], {3, 4})); }};
    });
    check("concat", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 2, 3}, r), random_leaf({2, 1, 3}, r)}, [](const std::vector<Tensor>& in) {
                        const Tensor parts[] = {in[0], in[1]};
                        return concat(parts, 1);
                    }};
    });
    check("spmm", [](std::mt19937_64& r) {
        const CsrMatrix a = gcn_normalize(random_graph(5, r));
        return Case{{random_leaf({5, 3}, r)}, [a](const std::vector<Tensor>& in) { return spmm(a, in[0]); }};
    });
    check("mul_rows", [](std::mt19937_64& r) {
        return Case{{random_leaf({4, 3}, r), random_leaf({4}, r)},
                    [](const std::vector<Tensor>& in) { return mul_rows(in[0], in[1]); }};
    });
    check("index_rows", [](std::mt19937_64& r) {
        return Case{{random_leaf({5, 3}, r)}, [](const std::vector<Tensor>& in) {
                        const std::vector<std::size_t> rows{4, 0, 2, 2};
                        return index_rows(in[0], rows);
                    }};
    });
    check("segment_mean", [](std::mt19937_64& r) {
        return Case{{random_leaf({6, 3}, r)}, [](const std::vector<Tensor>& in) {
                        const std::vector<std::size_t> seg{0, 0, 1, 2, 2, 2};
                        return segment_mean(in[0], seg, 3);
                    }};
    });
    check("l2_normalize", [](std::mt19937_64& r) { return unary_case(r, {4}, 0.0, l2_normalize); });
    check("conv2d", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 2, 5, 5}, r), random_leaf({3, 2, 3, 3}, r), random_leaf({3}, r)},
                    [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1, 1); }};
    });
    check("conv2d_strided", [](std::mt19937_64& r) {
        return Case{{random_leaf({1, 2, 6, 5}, r), random_leaf({2, 2, 3, 3}, r), random_leaf({2}, r)},
                    [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2, 0); }};
    });
    check("avg_pool2d", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 2, 5, 4}, r)}, [](const std::vector<Tensor>& in) { return avg_pool2d(in[0], 2); }};
    });
    check("global_avg_pool", [](std::mt19937_64& r) { return unary_case(r, {2, 3, 3, 2}, 0.0, global_avg_pool); });
    check("attention", [](std::mt19937_64& r) {
        return Case{{random_leaf({2, 3, 4}, r), random_leaf({2, 3, 4}, r), random_leaf({2, 3, 4}, r)},
                    [](const std::vector<Tensor>& in) { return attention(in[0], in[1], in[2], 2); }};
    });
    check("gcn_conv", [](std::mt19937_64& r) {
        const CsrMatrix a = gcn_normalize(random_graph(5, r));
        return Case{{random_leaf({5, 3}, r), random_leaf({3, 4}, r), random_leaf({4}, r)},
                    [a](const std::vector<Tensor>& in) {
                        Linear layer;
                        layer.weight = in[1];
                        layer.bias = in[2];
                        return gcn_conv(a, in[0], layer);
                    }};
    });
    check("gin_conv", [](std::mt19937_64& r) {
        const CsrMatrix a = random_graph(5, r);
        return Case{{random_leaf({5, 3}, r), random_leaf({3, 4}, r), random_leaf({4}, r), random_leaf({4, 4}, r),
                     random_leaf({4}, r)},
                    [a](const std::vector<Tensor>& in) {
                        GinMlp mlp;
                        mlp.first.weight = in[1];
                        mlp.first.bias = in[2];
                        mlp.second.weight = in[3];
                        mlp.second.bias = in[4];
                        return gin_conv(a, in[0], mlp, 0.25);
                    }};
    });
    check("topk_pool", [](std::mt19937_64& r) {
        const CsrMatrix a = random_graph(7, r);
        return Case{{random_leaf({7, 3}, r), random_leaf({3}, r)}, [a](const std::vector<Tensor>& in) {
                        const std::vector<std::size_t> seg{0, 0, 0, 1, 1, 1, 1};
                        return topk_pool(in[0], a, seg, 2, in[1], 0.5).h;
                    }};
    });
    check("model_plain_gcn_mlp",
        [](std::mt19937_64& r) { return model_case(r, CnnKind::plain, GnnKind::gcn, FusionMode::mlp); });
    check("model_residual_gin_transformer",
        [](std::mt19937_64& r) { return model_case(r, CnnKind::residual, GnnKind::gin, FusionMode::transformer); });
    check("model_dense_gcn_none",
        [](std::mt19937_64& r) { return model_case(r, CnnKind::dense, GnnKind::gcn, FusionMode::none); });
    if (inject_fault) {
        check("injected_fault", [](std::mt19937_64& r) {
            return Case{{random_leaf({4}, r)}, [](const std::vector<Tensor>& in) { return faulty_double(in[0]); }};
        });
    }
    return s;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
    std::vector<GradCheckResult> results;
    const auto checks = suite(options.inject_fault);
    for (std::size_t c = 0; c < checks.size(); ++c) {
        GradCheckResult res;
        res.name = checks[c].first;
        bool complete = true;
        for (std::size_t s = 0; s < options.seeds; ++s) {
            std::mt19937_64 rng(options.seed * 1000003ULL + c * 7919ULL + s);
            GradientComparison cmp;
            std::size_t attempt = 0;
            do {
                const Case k = checks[c].second(rng);
                cmp = compare_gradients(k.f, k.inputs, options.h, rng);
                if (!cmp.smooth) ++res.redrawn;
            } while (!cmp.smooth && ++attempt < kMaxDraws);
            if (!cmp.smooth) complete = false;
            res.max_error = std::max(res.max_error, cmp.error);
        }
        res.passed = complete && res.max_error < options.tolerance;
        results.push_back(res);
    }
    return results;
}

std::string gradcheck_report(const std::vector<GradCheckResult>& results) {
    std::string out;
    std::size_t failed = 0;
    char buf[160];
    for (const GradCheckResult& r : results) {
        std::snprintf(buf, sizeof buf, "%-32s max_rel_err=%.3e redrawn=%zu %s\n", r.name.c_str(), r.max_error,
                      r.redrawn, r.passed ? "PASS" : "FAIL");
        out += buf;
        if (!r.passed) ++failed;
    }
    out += failed == 0 ? "all " + std::to_string(results.size()) + " checks passed\n"
                       : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed\n";
    return out;
}

}  // namespace histofuse
