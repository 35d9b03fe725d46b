#include "histofuse/optim.hpp"

#include <cmath>
#include <numbers>

#include "histofuse/errors.hpp"

namespace histofuse {

AdamW::AdamW(ParamList params, AdamWOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, t] : params_) {
        if (!t.requires_grad()) throw ContractError("AdamW: parameter '" + name + "' does not require grad");
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    if (!(lr >= 0.0)) throw ParameterError("AdamW: learning rate must be non-negative");
    for (const auto& [name, t] : params_) {
        if (t.node()->grad.size() != t.numel()) throw ContractError("AdamW: parameter '" + name + "' has no gradient");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].second;
        auto theta = p.mutable_data();
        auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
            v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            theta[k] -= lr * options_.weight_decay * theta[k];
            theta[k] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
}

void AdamW::zero_grad() { histofuse::zero_grad(params_); }

double cosine_lr(std::uint64_t t, double lr_max, double lr_min, std::uint64_t t_max) {
    if (t_max == 0) throw ParameterError("cosine_lr: T_max must be positive");
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace histofuse
