#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "histofuse/tensor.hpp"

namespace histofuse {

// f maps leaf tensors to any tensor; it is reduced to a scalar through a fixed
// random projection so that every output entry contributes to the check.
using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Gradient entries below this magnitude are compared in absolute terms: a
// gradient that is exactly zero still shows central-difference roundoff.
inline constexpr double kGradientFloor = 1e-6;
// Slope jump, relative to the gradient scale, above which an instance is taken
// to straddle a kink (ReLU at zero, top-k swap) within one step of the probe.
inline constexpr double kKinkThreshold = 2e-5;

struct GradientComparison {
    // Largest per-input error, max|a - n| / max(max|a|, max|n|, kGradientFloor).
    double error = 0.0;
    bool smooth = true;
};

GradientComparison compare_gradients(const GradFn& f, const std::vector<Tensor>& inputs, double h,
                                     std::mt19937_64& rng);
double gradient_error(const GradFn& f, const std::vector<Tensor>& inputs, double h, std::mt19937_64& rng);

struct GradCheckOptions {
    std::uint64_t seed = 0;
    std::size_t seeds = 20;  // random instances per check
    double h = 1e-4;
    double tolerance = 1e-4;
    // Adds a check whose backward pass is deliberately wrong (negative control).
    bool inject_fault = false;
};

struct GradCheckResult {
    std::string name;
    double max_error = 0.0;  // over all seeds
    // Instances discarded because the finite difference straddled a kink.
    std::size_t redrawn = 0;
    bool passed = false;
};

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

// One line per check (`name max_rel_err PASS|FAIL`) and a closing verdict.
std::string gradcheck_report(const std::vector<GradCheckResult>& results);

}  // namespace histofuse
