#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "histofuse/ops.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

// Named trainable tensors, in a stable order. Names are used as checkpoint keys.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Per-forward state: train/eval switch and the dropout stream.
struct Context {
    bool training = false;
    std::mt19937_64 rng{0};
};

// PyTorch-style fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_param(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
           std::mt19937_64& rng);

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor shift;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
    void collect(const std::string& prefix, ParamList& out) const;
};

void zero_grad(const ParamList& params);
std::size_t parameter_count(const ParamList& params);

}  // namespace histofuse
