#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace histofuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the recorded computation. Leaves carry no backward function;
// interior vertices own a closure that reads `grad` and accumulates into the
// grads of `inputs`.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
//
// A Tensor is a cheap handle: copies share storage and history. Use clone()
// for an independent leaf with the same values.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Independent leaf holding a copy of the values.
    Tensor clone(bool requires_grad = false) const;
    // Copy of the values with no history; gradients stop here.
    Tensor detach() const { return clone(false); }

    // Internal: used by the op library to build the graph.
    static Tensor make_result(Shape shape, std::vector<double> value,
                              std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward);
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Propagates d(loss)/d(leaf) into every leaf that requires a gradient.
// Leaf gradients accumulate across calls; call zero_grad() between steps.
void backward(const Tensor& loss);

// Throws NumericError if any value is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace histofuse
