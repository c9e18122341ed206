// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/diffcore/tensor.hpp"

#include "occfield/errors.hpp"

#include <sstream>
#include <unordered_set>

namespace occ::diff {

namespace {
thread_local bool g_grad_enabled = true;

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
    if (!node) {
        throw ContractError("use of an undefined tensor");
    }
    return *node;
}
} // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto extent : shape) {
        if (extent <= 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw DimensionError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                             " elements");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked(node_).data.size()); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
    checked(node_);
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
    checked(node_);
    node_->requires_grad = value;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
    checked(node_);
    return node_->ensure_grad();
}

void Tensor::zero_grad() {
    checked(node_);
    if (!node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

const char* Tensor::op_name() const { return checked(node_).op; }

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return from(n.shape, n.data, false);
}

void backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw ContractError("backward on an undefined tensor");
    }
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->is_leaf()) {
            continue;
        }
        for (auto& parent : node->parents) {
            if (parent->requires_grad) {
                parent->ensure_grad();
            }
        }
        node->backward(*node);
        // Interior gradients are not needed once propagated.
        if (node != loss.node().get()) {
            std::vector<double>().swap(node->grad);
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

} // namespace occ::diff
