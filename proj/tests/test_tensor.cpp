#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/gradcheck.hpp"
#include "histofuse/ops.hpp"
#include "histofuse/optim.hpp"
#include "histofuse/tensor.hpp"

using namespace histofuse;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true) {
    std::normal_distribution<double> n;
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("linear identity and bias-only") {
    const Tensor x = Tensor::from({1, 2}, {1, 2});
    CHECK(values(linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {0, 0}))) ==
          std::vector<double>{1, 2});
    CHECK(values(linear(x, Tensor::zeros({2, 2}), Tensor::from({2}, {3, 4}))) == std::vector<double>{3, 4});
    CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 2}), Tensor::zeros({2})), DimensionError);
}

TEST_CASE("linear gradient of sum against central differences") {
    std::mt19937_64 rng(3);
    const std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng)};
    const double err = gradient_error([](const std::vector<Tensor>& t) { return sum(linear(t[0], t[1], t[2])); },
                                      in, 1e-4, rng);
    CHECK(err < 1e-6);
}

TEST_CASE("activations") {
    CHECK(values(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    CHECK(values(gelu(Tensor::from({1}, {0}))) == std::vector<double>{0});
    CHECK(values(reglu(Tensor::from({4}, {3, -2, 1, 5}))) == std::vector<double>{3, -10});
    const auto lr = values(leaky_relu(Tensor::from({2}, {-2, 2})));
    CHECK(lr[0] == doctest::Approx(-0.02));
    CHECK(lr[1] == 2);
    CHECK(values(tanh(Tensor::from({1}, {0.5})))[0] == doctest::Approx(std::tanh(0.5)));
    CHECK(parse_activation("reglu") == Activation::reglu);
    CHECK_THROWS_AS(parse_activation("swish"), ParameterError);
}

TEST_CASE("layer norm") {
    const Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
    const auto y = values(layer_norm(Tensor::from({3}, {1, 2, 3}), g, b));
    CHECK(y[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y[1] == doctest::Approx(0.0));
    CHECK(y[2] == doctest::Approx(1.2247).epsilon(1e-3));
    CHECK(values(layer_norm(Tensor::from({3}, {5, 5, 5}), g, b)) == std::vector<double>{0, 0, 0});

    std::mt19937_64 rng(11);
    const Tensor x = random_tensor({64}, rng, false);
    const auto z = values(layer_norm(x, Tensor::full({64}, 1.0), Tensor::zeros({64})));
    double m = 0, v = 0;
    for (double e : z) m += e / 64;
    for (double e : z) v += (e - m) * (e - m) / 64;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-3);
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1000}, rng, false);
    CHECK(values(dropout(x, 0.0, 7, true)) == values(x));
    CHECK(values(dropout(x, 0.5, 7, false)) == values(x));

    const Tensor ones = Tensor::full({100000}, 1.0);
    const auto y = values(dropout(ones, 0.1, 42, true));
    double kept = 0, total = 0;
    for (double v : y) {
        kept += v != 0.0;
        total += v;
    }
    CHECK(kept / 1e5 == doctest::Approx(0.9).epsilon(0.01 / 0.9));
    CHECK(total / 1e5 == doctest::Approx(1.0).epsilon(0.01));
    CHECK(values(dropout(ones, 0.1, 42, true)) == y);
    CHECK_THROWS_AS(dropout(ones, 1.0, 1, true), ParameterError);
}

TEST_CASE("softmax") {
    CHECK(values(softmax(Tensor::from({2}, {0, 0}))) == std::vector<double>{0.5, 0.5});
    const auto big = values(softmax(Tensor::from({2}, {1000, 0})));
    CHECK(big[0] == 1.0);
    CHECK(big[1] == doctest::Approx(0.0));
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({3, 5}, rng, false);
    std::vector<double> shifted = values(x);
    for (double& v : shifted) v += 37.5;
    const auto a = values(softmax(x));
    const auto b = values(softmax(Tensor::from({3, 5}, shifted)));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("cross entropy") {
    const std::vector<int> zero{0};
    CHECK(cross_entropy(Tensor::from({1, 2}, {0, 0}), zero).item() == doctest::Approx(std::log(2.0)));
    CHECK(cross_entropy(Tensor::from({1, 2}, {10, -10}), zero).item() < 1e-4);
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(cross_entropy(Tensor::from({1, 2}, {0, 0}), bad), IndexError);

    std::mt19937_64 rng(4);
    const std::vector<int> labels{0, 1, 1, 0, 2};
    const double err = gradient_error(
        [&](const std::vector<Tensor>& t) { return cross_entropy(t[0], labels); }, {random_tensor({5, 3}, rng)},
        1e-4, rng);
    CHECK(err < 1e-5);
}

TEST_CASE("mse loss and its gradient") {
    const Tensor p = Tensor::from({2}, {0, 0}, true);
    const Tensor t = Tensor::from({2}, {3, 4});
    const Tensor loss = mse_loss(p, t);
    CHECK(loss.item() == 12.5);
    backward(loss);
    CHECK(std::abs(p.grad()[0] - 2 * (0 - 3) / 2.0) < 1e-10);
    CHECK(std::abs(p.grad()[1] - 2 * (0 - 4) / 2.0) < 1e-10);
    CHECK(mse_loss(t, t).item() == 0.0);
}

TEST_CASE("backward on simple expressions") {
    const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    const Tensor y = Tensor::from({2}, {1, -2}, true);
    backward(sum(mul(y, y)));
    CHECK(values(Tensor::from({2}, std::vector<double>(y.grad().begin(), y.grad().end()))) ==
          std::vector<double>{2, -4});

    CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("non-finite values are rejected") {
    const Tensor x = Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(require_finite(x.data(), "x"), NumericError);
}

TEST_CASE("adamw first steps") {
    // Zero gradient: only the decoupled decay acts.
    Tensor theta = Tensor::from({1}, {1.0}, true);
    AdamW decay_only({{"theta", theta}}, {.weight_decay = 1e-5});
    theta.mutable_grad()[0] = 0.0;
    decay_only.step(5e-4);
    CHECK(theta.data()[0] == doctest::Approx(1.0 - 5e-9).epsilon(1e-15));

    // Without decay, the bias-corrected first step is lr * g / (|g| + eps).
    Tensor a = Tensor::from({2}, {0.5, 0.5}, true);
    Tensor b = Tensor::from({2}, {0.5, 0.5}, true);
    AdamW opt({{"a", a}, {"b", b}}, {.weight_decay = 0.0});
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = -0.2;
    b.mutable_grad()[0] = 3.0;
    b.mutable_grad()[1] = -0.2;
    opt.step(1e-3);
    CHECK(a.data()[0] == doctest::Approx(0.5 - 1e-3 * 3.0 / (3.0 + 1e-8)));
    CHECK(a.data()[1] == doctest::Approx(0.5 + 1e-3 * 0.2 / (0.2 + 1e-8)));
    CHECK(values(a) == values(b));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("cosine learning rate") {
    CHECK(cosine_lr(0, 5e-4, 5e-6, 10) == doctest::Approx(5e-4));
    CHECK(cosine_lr(10, 5e-4, 5e-6, 10) == doctest::Approx(5e-6));
    CHECK(cosine_lr(5, 5e-4, 5e-6, 10) == doctest::Approx((5e-4 + 5e-6) / 2));
    CHECK(cosine_lr(3, 5e-4, 5e-6, 10) ==
          doctest::Approx(5e-6 + (5e-4 - 5e-6) * (1 + std::cos(std::numbers::pi * 0.3)) / 2));
}

TEST_CASE("attention collapses for one token") {
    std::mt19937_64 rng(9);
    const Tensor q = random_tensor({2, 1, 4}, rng, false);
    const Tensor k = random_tensor({2, 1, 4}, rng, false);
    const Tensor v = random_tensor({2, 1, 4}, rng, false);
    CHECK(values(attention(q, k, v, 2)) == values(v));
}

TEST_CASE("gradient suite passes and the injected fault is caught") {
    const auto results = run_gradcheck_suite({.seeds = 3});
    for (const auto& r : results) {
        INFO(r.name << " " << r.max_error);
        CHECK(r.passed);
    }
    const auto faulty = run_gradcheck_suite({.seeds = 1, .inject_fault = true});
    CHECK_FALSE(faulty.back().passed);
    CHECK(faulty.back().name == "injected_fault");
    CHECK(gradcheck_report(faulty).find("FAIL") != std::string::npos);
}

}
