// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace occ::diff {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first written
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }
    std::vector<double>& ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

} // namespace detail

/// Dense row-major float64 tensor with an optional autodiff history.
///
/// Copies are shallow: two handles to the same tensor share storage and
/// gradient. The graph is rebuilt on every forward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::int64_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t numel() const;

    std::span<const double> data() const;
    /// Mutable view of the values. Only meaningful for leaves; mutating an
    /// interior node after the graph was built invalidates its gradients.
    std::span<double> mutable_data();
    double item() const;
    double at(std::int64_t flat_index) const { return data()[static_cast<std::size_t>(flat_index)]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    /// Gradient buffer; empty span when nothing was accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    const char* op_name() const;
    /// Copy of the values with no history.
    Tensor detach() const;

    // Internal handle for op implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Leaves accumulate into their
/// existing gradient; a loss that does not require grad is a no-op.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

} // namespace occ::diff
