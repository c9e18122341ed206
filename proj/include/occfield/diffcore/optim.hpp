// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/diffcore/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace occ::diff {

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

struct AdamWConfig {
    double peak_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::int64_t warmup_steps = 100;
    std::int64_t total_steps = 2000;
    double clip_norm = 1.0;
};

/// Linear warmup from 0 to the peak, then cosine decay to 0 at total_steps.
double scheduled_lr(const AdamWConfig& cfg, std::int64_t step);

/// Global L2 norm over every parameter gradient (missing grads count as 0).
double global_grad_norm(const NamedParameters& params);

/// Scales all gradients by threshold/norm when the norm exceeds the
/// threshold. Returns the pre-clip norm.
double clip_grad_norm(NamedParameters& params, double threshold);

struct StepStats {
    double lr = 0.0;
    double grad_norm = 0.0;   // before clipping
    double clip_factor = 1.0; // multiplier applied to the gradients
};

/// AdamW with decoupled weight decay. Moment buffers are keyed by position
/// in the parameter list, which must not change between steps.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    /// Clip, update, then zero every gradient. Throws DivergenceError naming
    /// the parameter if any gradient element is non-finite.
    StepStats step(NamedParameters& params);

    std::int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace occ::diff
