#include "histofuse/nn.hpp"

#include <cmath>

namespace histofuse {

Tensor uniform_param(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(uniform_param({in, out}, in, rng)), bias(uniform_param({out}, in, rng)) {}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_,
               std::mt19937_64& rng)
    : weight(uniform_param({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias(uniform_param({out}, in * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width)
    : gain(Tensor::full({width}, 1.0, true)), shift(Tensor::zeros({width}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".shift", shift);
}

void zero_grad(const ParamList& params) {
    for (const auto& [name, t] : params) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

}  // namespace histofuse
