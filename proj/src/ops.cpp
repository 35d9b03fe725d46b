#include "histofuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "histofuse/errors.hpp"
#include "kernels.hpp"

namespace histofuse {

namespace {

using detail::Node;

// Grad buffer of input `i` if it participates in differentiation, else null.
double* input_grad(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    if (!in.requires_grad) return nullptr;
    if (in.grad.size() != in.value.size()) in.grad.assign(in.value.size(), 0.0);
    return in.grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

std::size_t last_extent(const Tensor& x) { return x.shape().back(); }

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const auto& xv = self.inputs[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    });
}

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "leaky_relu") return Activation::leaky_relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "reglu") return Activation::reglu;
    if (name == "tanh") return Activation::tanh;
    throw ParameterError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
    switch (kind) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::gelu: return "gelu";
        case Activation::reglu: return "reglu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = input_grad(self, k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (double* g = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (double* g = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor reglu(const Tensor& x) {
    const std::size_t d = last_extent(x);
    if (d % 2 != 0) throw DimensionError("reglu needs an even last extent, got " + std::to_string(d));
    const std::size_t half = d / 2;
    const std::size_t rows = x.numel() / d;
    Shape shape = x.shape();
    shape.back() = half;
    auto in = x.data();
    std::vector<double> out(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* a = in.data() + r * d;
        const double* b = a + half;
        for (std::size_t j = 0; j < half; ++j) out[r * half + j] = a[j] * (b[j] > 0.0 ? b[j] : 0.0);
    }
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [rows, d, half](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const auto& in = self.inputs[0]->value;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* a = in.data() + r * d;
            const double* b = a + half;
            double* ga = gx + r * d;
            double* gb = ga + half;
            const double* g = self.grad.data() + r * half;
            for (std::size_t j = 0; j < half; ++j) {
                if (b[j] > 0.0) {
                    ga[j] += g[j] * b[j];
                    gb[j] += g[j] * a[j];
                }
            }
        }
    });
}

Tensor activation(Activation kind, const Tensor& x) {
    switch (kind) {
        case Activation::relu: return relu(x);
        case Activation::leaky_relu: return leaky_relu(x);
        case Activation::gelu: return gelu(x);
        case Activation::reglu: return reglu(x);
        case Activation::tanh: return tanh(x);
    }
    throw ParameterError("unknown activation");
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::make_result({1}, {total}, {x}, [](Node& self) {
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw DimensionError("mean_axis: axis out of range for " + shape_str(s));
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    auto in = x.data();
    std::vector<double> out(outer * inner, 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            const double* src = in.data() + (o * n + k) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    for (double& v : out) v *= inv;
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, n, inv](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                double* dst = gx + (o * n + k) * inner;
                const double* g = self.grad.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range");
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::vector<std::size_t> widths;  // contiguous block per outer index for each part
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) {
                throw DimensionError("concat: extent mismatch " + shape_str(s) + " vs " + shape_str(first));
            }
        }
        out_shape[axis] += s[axis];
        widths.push_back(p.numel() / outer);
    }
    std::size_t row = 0;
    for (std::size_t w : widths) row += w;
    std::vector<double> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * widths[k], widths[k], out.data() + o * row + offset);
        }
        offset += widths[k];
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return Tensor::make_result(std::move(out_shape), std::move(out), std::move(inputs),
                               [outer, row, widths](Node& self) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                       if (double* g = input_grad(self, k)) {
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const double* src = self.grad.data() + o * row + off;
                                               double* dst = g + o * widths[k];
                                               for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                                           }
                                       }
                                       off += widths[k];
                                   }
                               });
}

Tensor matmul(const Tensor& x, const Tensor& weight) {
    if (weight.rank() != 2) throw DimensionError("matmul: weight must be 2-D, got " + shape_str(weight.shape()));
    const std::size_t in = weight.dim(0);
    const std::size_t out = weight.dim(1);
    if (last_extent(x) != in) {
        throw DimensionError("matmul: inner extents differ " + shape_str(x.shape()) + " · " +
                             shape_str(weight.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape shape = x.shape();
    shape.back() = out;
    std::vector<double> result(rows * out, 0.0);
    kernels::gemm_nn(rows, out, in, x.data().data(), weight.data().data(), result.data());
    return Tensor::make_result(std::move(shape), std::move(result), {x, weight}, [rows, in, out](Node& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        if (double* gx = input_grad(self, 0)) kernels::gemm_nt(rows, in, out, self.grad.data(), wv.data(), gx);
        if (double* gw = input_grad(self, 1)) kernels::gemm_tn(in, out, rows, xv.data(), self.grad.data(), gw);
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw DimensionError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
    const std::size_t in = weight.dim(0);
    const std::size_t out = weight.dim(1);
    if (last_extent(x) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    if (bias.numel() != out) throw DimensionError("linear: bias must have " + std::to_string(out) + " entries");
    const std::size_t rows = x.numel() / in;
    Shape shape = x.shape();
    shape.back() = out;
    std::vector<double> result(rows * out);
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), result.begin() + r * out);
    kernels::gemm_nn(rows, out, in, x.data().data(), weight.data().data(), result.data());
    return Tensor::make_result(std::move(shape), std::move(result), {x, weight, bias},
                               [rows, in, out](Node& self) {
                                   const auto& xv = self.inputs[0]->value;
                                   const auto& wv = self.inputs[1]->value;
                                   const double* g = self.grad.data();
                                   if (double* gx = input_grad(self, 0)) kernels::gemm_nt(rows, in, out, g, wv.data(), gx);
                                   if (double* gw = input_grad(self, 1)) kernels::gemm_tn(in, out, rows, xv.data(), g, gw);
                                   if (double* gb = input_grad(self, 2)) {
                                       for (std::size_t r = 0; r < rows; ++r) {
                                           for (std::size_t j = 0; j < out; ++j) gb[j] += g[r * out + j];
                                       }
                                   }
                               });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    const std::size_t d = last_extent(x);
    if (gain.numel() != d || shift.numel() != d) throw DimensionError("layer_norm: gain/shift width mismatch");
    if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    auto in = x.data();
    auto gv = gain.data();
    auto sv = shift.data();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gv[j] + sv[j];
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, gain, shift}, [rows, d, xhat, inv_std](Node& self) {
        const auto& gv = self.inputs[1]->value;
        const double* g = self.grad.data();
        double* gx = input_grad(self, 0);
        double* gg = input_grad(self, 1);
        double* gs = input_grad(self, 2);
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* h = xhat->data() + r * d;
            const double* gr = g + r * d;
            if (gg) {
                for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * h[j];
            }
            if (gs) {
                for (std::size_t j = 0; j < d; ++j) gs[j] += gr[j];
            }
            if (gx) {
                double mean_dh = 0.0;
                double mean_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dh[j] = gr[j] * gv[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * h[j];
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                const double is = (*inv_std)[r];
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
            }
        }
    });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    auto in = x.data();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = unif(rng) < p ? 0.0 : keep_scale;
        out[i] = in[i] * (*mask)[i];
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [mask](Node& self) {
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
        }
    });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training) {
    std::mt19937_64 rng(seed);
    return dropout(x, p, rng, training);
}

Tensor softmax(const Tensor& x) {
    const std::size_t d = last_extent(x);
    const std::size_t rows = x.numel() / d;
    auto in = x.data();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double* y = out.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(row[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= z;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B, C]");
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != batch) throw DimensionError("cross_entropy: label count does not match batch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
    auto in = logits.data();
    auto probs = std::make_shared<std::vector<double>>(in.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = in.data() + b * classes;
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - lse);
        total += lse - row[labels[b]];
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return Tensor::make_result({1}, {total / static_cast<double>(batch)}, {logits},
                               [probs, ys, batch, classes](Node& self) {
                                   double* g = input_grad(self, 0);
                                   if (!g) return;
                                   const double s = self.grad[0] / static_cast<double>(batch);
                                   for (std::size_t b = 0; b < batch; ++b) {
                                       for (std::size_t c = 0; c < classes; ++c) {
                                           const double onehot = static_cast<int>(c) == ys[b] ? 1.0 : 0.0;
                                           g[b * classes + c] += s * ((*probs)[b * classes + c] - onehot);
                                       }
                                   }
                               });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    auto p = pred.data();
    auto t = target.data();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
    const double n = static_cast<double>(p.size());
    return Tensor::make_result({1}, {total / n}, {pred, target}, [n](Node& self) {
        const auto& p = self.inputs[0]->value;
        const auto& t = self.inputs[1]->value;
        const double s = 2.0 * self.grad[0] / n;
        if (double* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < p.size(); ++i) g[i] += s * (p[i] - t[i]);
        }
        if (double* g = input_grad(self, 1)) {
            for (std::size_t i = 0; i < p.size(); ++i) g[i] -= s * (p[i] - t[i]);
        }
    });
}

Tensor spmm(const CsrMatrix& a, const Tensor& x) {
    if (x.dim(0) != a.cols) {
        throw DimensionError("spmm: matrix has " + std::to_string(a.cols) + " columns but input has " +
                             std::to_string(x.dim(0)) + " rows");
    }
    const std::size_t width = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = a.rows;
    auto in = x.data();
    std::vector<double> out(a.rows * width, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* dst = out.data() + i * width;
        for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
            const double w = a.values[e];
            const double* src = in.data() + a.col_idx[e] * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
        }
    }
    auto mat = std::make_shared<CsrMatrix>(a);
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [mat, width](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < mat->rows; ++i) {
            const double* g = self.grad.data() + i * width;
            for (std::size_t e = mat->row_ptr[i]; e < mat->row_ptr[i + 1]; ++e) {
                const double w = mat->values[e];
                double* dst = gx + mat->col_idx[e] * width;
                for (std::size_t j = 0; j < width; ++j) dst[j] += w * g[j];
            }
        }
    });
}

Tensor mul_rows(const Tensor& x, const Tensor& s) {
    const std::size_t n = x.dim(0);
    if (s.numel() != n) throw DimensionError("mul_rows: need one factor per row");
    const std::size_t width = x.numel() / n;
    auto xv = x.data();
    auto sv = s.data();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < width; ++j) out[i * width + j] = xv[i * width + j] * sv[i];
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, s}, [n, width](Node& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& sv = self.inputs[1]->value;
        const double* g = self.grad.data();
        double* gx = input_grad(self, 0);
        double* gs = input_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                if (gx) gx[i * width + j] += g[i * width + j] * sv[i];
                acc += g[i * width + j] * xv[i * width + j];
            }
            if (gs) gs[i] += acc;
        }
    });
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t n = x.dim(0);
    if (rows.empty()) throw DimensionError("index_rows: empty selection");
    const std::size_t width = x.numel() / n;
    for (std::size_t r : rows) {
        if (r >= n) throw IndexError("index_rows: row " + std::to_string(r) + " out of range");
    }
    Shape shape = x.shape();
    shape[0] = rows.size();
    auto xv = x.data();
    std::vector<double> out(rows.size() * width);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        std::copy_n(xv.data() + rows[k] * width, width, out.data() + k * width);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [idx, width](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double* g = self.grad.data() + k * width;
            double* dst = gx + idx[k] * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
        }
    });
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment, std::size_t groups) {
    const std::size_t n = x.dim(0);
    if (segment.size() != n) throw DimensionError("segment_mean: one segment id per row required");
    const std::size_t width = x.numel() / n;
    std::vector<double> counts(groups, 0.0);
    for (std::size_t s : segment) {
        if (s >= groups) throw IndexError("segment_mean: segment id out of range");
        counts[s] += 1.0;
    }
    for (double c : counts) {
        if (c == 0.0) throw ContractError("segment_mean: empty segment");
    }
    auto xv = x.data();
    std::vector<double> out(groups * width, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.data() + segment[i] * width;
        const double* src = xv.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t j = 0; j < width; ++j) out[g * width + j] /= counts[g];
    }
    Shape shape = x.shape();
    shape[0] = groups;
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [seg, counts, width](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < seg.size(); ++i) {
            const double inv = 1.0 / counts[seg[i]];
            const double* g = self.grad.data() + seg[i] * width;
            double* dst = gx + i * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] += g[j] * inv;
        }
    });
}

Tensor l2_normalize(const Tensor& v) {
    double sq = 0.0;
    for (double a : v.data()) sq += a * a;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw NumericError("l2_normalize: zero vector");
    std::vector<double> out(v.numel());
    auto in = v.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] / norm;
    return Tensor::make_result(v.shape(), std::move(out), {v}, [norm](Node& self) {
        double* gv = input_grad(self, 0);
        if (!gv) return;
        const auto& y = self.value;
        double dot = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * self.grad[i];
        for (std::size_t i = 0; i < y.size(); ++i) gv[i] += (self.grad[i] - y[i] * dot) / norm;
    });
}

namespace {

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t out_channels, kernel, stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return channels * kernel * kernel; }
    std::size_t positions() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ox·stride + k − padding lies inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t padding, std::size_t stride,
                                                std::size_t extent, std::size_t out) {
    std::size_t lo = 0;
    if (padding > k) lo = (padding - k + stride - 1) / stride;
    std::size_t hi = 0;
    if (extent + padding > k) hi = std::min(out, (extent + padding - k - 1) / stride + 1);
    return {std::min(lo, hi), hi};
}

// Writes the patches of one image into columns [offset, offset + positions) of
// a zero-filled row-major matrix with `ld` columns. Padding entries are left untouched.
void im2col(const ConvGeometry& g, const double* img, double* cols, std::size_t ld, std::size_t offset) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        const double* plane = img + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const auto [ylo, yhi] = valid_range(ky, g.padding, g.stride, g.height, g.out_h);
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const auto [xlo, xhi] = valid_range(kx, g.padding, g.stride, g.width, g.out_w);
                double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ld + offset;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    double* dst = row + oy * g.out_w;
                    const double* src = plane + (oy * g.stride + ky - g.padding) * g.width;
                    if (g.stride == 1) {
                        std::copy_n(src + xlo + kx - g.padding, xhi - xlo, dst + xlo);
                    } else {
                        for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.stride + kx - g.padding];
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* cols, std::size_t ld, std::size_t offset, double* img) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        double* plane = img + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const auto [ylo, yhi] = valid_range(ky, g.padding, g.stride, g.height, g.out_h);
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const auto [xlo, xhi] = valid_range(kx, g.padding, g.stride, g.width, g.out_w);
                const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ld + offset;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    const double* src = row + oy * g.out_w;
                    double* dst = plane + (oy * g.stride + ky - g.padding) * g.width;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride + kx - g.padding] += src[ox];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
    if (x.rank() != 4) throw DimensionError("conv2d: input must be [B, C, H, W], got " + shape_str(x.shape()));
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
        throw DimensionError("conv2d: weight must be [O, C, k, k], got " + shape_str(weight.shape()));
    }
    if (stride == 0) throw ParameterError("conv2d: stride must be positive");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.channels = x.dim(1);
    g.height = x.dim(2);
    g.width = x.dim(3);
    g.out_channels = weight.dim(0);
    g.kernel = weight.dim(2);
    g.stride = stride;
    g.padding = padding;
    if (weight.dim(1) != g.channels) {
        throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " channels, input has " +
                             std::to_string(g.channels));
    }
    if (bias.numel() != g.out_channels) throw DimensionError("conv2d: bias must have one entry per output channel");
    if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel) {
        throw DimensionError("conv2d: kernel " + std::to_string(g.kernel) + " does not fit padded input " +
                             shape_str(x.shape()));
    }
    g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
    g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;

    // All images share one [patch, B·P] column matrix so a single GEMM covers the batch.
    const std::size_t in_plane = g.channels * g.height * g.width;
    const std::size_t p = g.positions();
    const std::size_t ld = g.batch * p;
    auto xv = x.data();
    auto wv = weight.data();
    auto bv = bias.data();
    auto cols = std::make_shared<std::vector<double>>(g.patch() * ld);
    for (std::size_t b = 0; b < g.batch; ++b) im2col(g, xv.data() + b * in_plane, cols->data(), ld, b * p);
    std::vector<double> flat(g.out_channels * ld, 0.0);
    kernels::gemm_nn(g.out_channels, ld, g.patch(), wv.data(), cols->data(), flat.data());
    std::vector<double> out(g.batch * g.out_channels * p);
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            const double* src = flat.data() + o * ld + b * p;
            double* dst = out.data() + (b * g.out_channels + o) * p;
            for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + bv[o];
        }
    }
    Shape shape{g.batch, g.out_channels, g.out_h, g.out_w};
    return Tensor::make_result(std::move(shape), std::move(out), {x, weight, bias}, [g, cols](Node& self) {
        const auto& wv = self.inputs[1]->value;
        double* gx = input_grad(self, 0);
        double* gw = input_grad(self, 1);
        double* gb = input_grad(self, 2);
        const std::size_t in_plane = g.channels * g.height * g.width;
        const std::size_t p = g.positions();
        const std::size_t ld = g.batch * p;
        std::vector<double> gout(g.out_channels * ld);
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                const double* src = self.grad.data() + (b * g.out_channels + o) * p;
                std::copy_n(src, p, gout.data() + o * ld + b * p);
            }
        }
        if (gb) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                double acc = 0.0;
                for (std::size_t q = 0; q < ld; ++q) acc += gout[o * ld + q];
                gb[o] += acc;
            }
        }
        if (gw) kernels::gemm_nt(g.out_channels, g.patch(), ld, gout.data(), cols->data(), gw);
        if (gx) {
            std::vector<double> dcols(g.patch() * ld, 0.0);
            kernels::gemm_tn(g.patch(), ld, g.out_channels, wv.data(), gout.data(), dcols.data());
            for (std::size_t b = 0; b < g.batch; ++b) col2im(g, dcols.data(), ld, b * p, gx + b * in_plane);
        }
    });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
    if (x.rank() != 4) throw DimensionError("avg_pool2d: input must be [B, C, H, W]");
    if (k == 0) throw ParameterError("avg_pool2d: window must be positive");
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    const std::size_t oh = h / k;
    const std::size_t ow = w / k;
    if (oh == 0 || ow == 0) throw DimensionError("avg_pool2d: window larger than input " + shape_str(x.shape()));
    const double inv = 1.0 / static_cast<double>(k * k);
    auto xv = x.data();
    std::vector<double> out(planes * oh * ow, 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            double* dst = out.data() + (p * oh + oy) * ow;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const double* src = xv.data() + (p * h + oy * k + ky) * w;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    for (std::size_t kx = 0; kx < k; ++kx) dst[ox] += src[ox * k + kx];
                }
            }
        }
    }
    for (double& v : out) v *= inv;
    Shape shape{x.dim(0), x.dim(1), oh, ow};
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [planes, h, w, oh, ow, k, inv](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const double* src = self.grad.data() + (p * oh + oy) * ow;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    double* dst = gx + (p * h + oy * k + ky) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double g = src[ox] * inv;
                        for (std::size_t kx = 0; kx < k; ++kx) dst[ox * k + kx] += g;
                    }
                }
            }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool: input must be [B, C, H, W]");
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t area = x.dim(2) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(area);
    auto xv = x.data();
    std::vector<double> out(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += xv[p * area + i];
        out[p] = acc * inv;
    }
    return Tensor::make_result({x.dim(0), x.dim(1)}, std::move(out), {x}, [planes, area, inv](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
            const double g = self.grad[p] * inv;
            for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += g;
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    if (q.rank() != 3) throw DimensionError("attention: inputs must be [B, T, d]");
    const std::size_t batch = q.dim(0);
    const std::size_t tokens = q.dim(1);
    const std::size_t d = q.dim(2);
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    auto qv = q.data();
    auto kv = k.data();
    auto vv = v.data();
    // probs[b][h][t][s]
    auto probs = std::make_shared<std::vector<double>>(batch * heads * tokens * tokens);
    std::vector<double> out(q.numel(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* a = probs->data() + (b * heads + h) * tokens * tokens;
            for (std::size_t t = 0; t < tokens; ++t) {
                const double* qt = qv.data() + (b * tokens + t) * d + h * dh;
                double mx = -INFINITY;
                for (std::size_t s = 0; s < tokens; ++s) {
                    const double* ks = kv.data() + (b * tokens + s) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < dh; ++j) dot += qt[j] * ks[j];
                    a[t * tokens + s] = dot * scale_factor;
                    mx = std::max(mx, a[t * tokens + s]);
                }
                double z = 0.0;
                for (std::size_t s = 0; s < tokens; ++s) {
                    a[t * tokens + s] = std::exp(a[t * tokens + s] - mx);
                    z += a[t * tokens + s];
                }
                double* ot = out.data() + (b * tokens + t) * d + h * dh;
                for (std::size_t s = 0; s < tokens; ++s) {
                    a[t * tokens + s] /= z;
                    const double* vs = vv.data() + (b * tokens + s) * d + h * dh;
                    for (std::size_t j = 0; j < dh; ++j) ot[j] += a[t * tokens + s] * vs[j];
                }
            }
        }
    }
    return Tensor::make_result(q.shape(), std::move(out), {q, k, v},
                               [probs, batch, tokens, d, heads, dh, scale_factor](Node& self) {
                                   const auto& qv = self.inputs[0]->value;
                                   const auto& kv = self.inputs[1]->value;
                                   const auto& vv = self.inputs[2]->value;
                                   double* gq = input_grad(self, 0);
                                   double* gk = input_grad(self, 1);
                                   double* gv = input_grad(self, 2);
                                   std::vector<double> da(tokens);
                                   for (std::size_t b = 0; b < batch; ++b) {
                                       for (std::size_t h = 0; h < heads; ++h) {
                                           const double* a = probs->data() + (b * heads + h) * tokens * tokens;
                                           for (std::size_t t = 0; t < tokens; ++t) {
                                               const double* go = self.grad.data() + (b * tokens + t) * d + h * dh;
                                               double dot = 0.0;
                                               for (std::size_t s = 0; s < tokens; ++s) {
                                                   const double* vs = vv.data() + (b * tokens + s) * d + h * dh;
                                                   double acc = 0.0;
                                                   for (std::size_t j = 0; j < dh; ++j) acc += go[j] * vs[j];
                                                   da[s] = acc;
                                                   dot += acc * a[t * tokens + s];
                                                   if (gv) {
                                                       double* gvs = gv + (b * tokens + s) * d + h * dh;
                                                       for (std::size_t j = 0; j < dh; ++j) gvs[j] += a[t * tokens + s] * go[j];
                                                   }
                                               }
                                               const double* qt = qv.data() + (b * tokens + t) * d + h * dh;
                                               for (std::size_t s = 0; s < tokens; ++s) {
                                                   const double ds = a[t * tokens + s] * (da[s] - dot) * scale_factor;
                                                   if (ds == 0.0) continue;
                                                   const double* ks = kv.data() + (b * tokens + s) * d + h * dh;
                                                   if (gq) {
                                                       double* gqt = gq + (b * tokens + t) * d + h * dh;
                                                       for (std::size_t j = 0; j < dh; ++j) gqt[j] += ds * ks[j];
                                                   }
                                                   if (gk) {
                                                       double* gks = gk + (b * tokens + s) * d + h * dh;
                                                       for (std::size_t j = 0; j < dh; ++j) gks[j] += ds * qt[j];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               });
}

}  // namespace histofuse
