#include "histofuse/tensor.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include "histofuse/errors.hpp"

namespace histofuse {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
    }
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    std::vector<double> values(shape_numel(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) throw DimensionError("axis out of range for " + shape_str(node_->shape));
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw IndexError("index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
    if (!node_->requires_grad) throw ContractError("tensor does not require grad");
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!node_->requires_grad) throw ContractError("tensor does not require grad");
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
    require_finite(value, "forward pass");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const Tensor& in : inputs) {
        if (in.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (Tensor& in : inputs) node->inputs.push_back(std::move(in.node_));
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) throw ContractError("backward() requires a scalar loss");
    if (!loss.requires_grad()) throw ContractError("loss does not depend on any trainable tensor");

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* node : order) {
        if (node->backward) {
            node->grad.assign(node->value.size(), 0.0);
        } else if (node->grad.size() != node->value.size()) {
            node->grad.assign(node->value.size(), 0.0);
        }
    }
    detail::Node* root = loss.node().get();
    if (root->backward) {
        root->grad[0] = 1.0;
    } else {
        root->grad[0] += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward) node->backward(*node);
    }
    for (detail::Node* node : order) {
        if (!node->backward) require_finite(node->grad, "backward pass");
    }
}

}  // namespace histofuse
