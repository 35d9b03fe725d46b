#pragma once

#include <cstdint>
#include <vector>

#include "histofuse/nn.hpp"

namespace histofuse {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

// AdamW with decoupled weight decay:
//   θ ← θ − lr·λ·θ − lr · m̂ / (sqrt(v̂) + eps)
class AdamW {
public:
    AdamW(ParamList params, AdamWOptions options = {});

    void step(double lr);
    void zero_grad();

    std::uint64_t step_count() const { return steps_; }
    const ParamList& params() const { return params_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

private:
    ParamList params_;
    AdamWOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t steps_ = 0;
};

// Closed-form cosine annealing:
//   lr_min + (lr_max − lr_min)·(1 + cos(π·t / t_max)) / 2
double cosine_lr(std::uint64_t t, double lr_max, double lr_min, std::uint64_t t_max);

}  // namespace histofuse
