// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/diffcore/tensor.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace occ::diff {

// Ops treat their operands as matrices [rows, last extent] unless noted.
// Every op records a backward closure when grad mode is on and at least one
// input requires grad.

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same-shape sum, or b broadcast along rows when b has numel == a's last extent.
Tensor add(const Tensor& a, const Tensor& b);
/// Same-shape elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor softmax_lastdim(const Tensor& a);
/// Normalizes each row, then applies gamma/beta (both numel == last extent).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Concatenates along the last axis; all parts must have the same row count.
Tensor concat_lastdim(std::span<const Tensor> parts);
/// grid [C,H,W], coords [N,2] as (x->W axis, y->H axis) in [-1,1]^2 with
/// align-corners mapping (-1 -> index 0, +1 -> index extent-1). Returns [N,C].
Tensor bilinear_sample_2d(const Tensor& grid, const Tensor& coords);
Tensor transpose_2d(const Tensor& a);
/// Mean over every element -> shape [1].
Tensor mean(const Tensor& a);
/// Mean binary cross-entropy computed from logits with the log-sum-exp form.
/// labels is a constant tensor with the same element count.
Tensor bce(const Tensor& logits, const Tensor& labels);

// Structural helpers the model needs on top of the arithmetic set.

/// Same elements, new shape.
Tensor reshape(const Tensor& a, Shape shape);
/// Picks rows of a [m,n]; index -1 yields a zero row (used for padding).
Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> rows);
/// Columns [begin, end) of a [m,n].
Tensor slice_lastdim(const Tensor& a, std::int64_t begin, std::int64_t end);

enum class OpKind {
    matmul,
    add,
    scale,
    softmax_lastdim,
    layer_norm,
    gelu,
    relu,
    sigmoid,
    concat_lastdim,
    bilinear_sample_2d,
    transpose_2d,
    mean,
    bce,
    mul,
    reshape,
    gather_rows,
    slice_lastdim,
};

std::string_view op_name(OpKind kind);

/// Uniform dispatch over the op set. Non-tensor arguments travel as constant
/// tensors: scale takes its factor as a [1] tensor, layer_norm takes
/// (x, gamma, beta), bce takes (logits, labels), reshape takes (a, target
/// shape as values), gather_rows takes (a, row indices as values),
/// slice_lastdim takes (a, [begin, end]).
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs);

} // namespace occ::diff
