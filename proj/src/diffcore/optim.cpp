// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/diffcore/optim.hpp"

#include "occfield/errors.hpp"

#include <algorithm>
#include <cmath>

namespace occ::diff {

double scheduled_lr(const AdamWConfig& cfg, std::int64_t step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const auto decay_steps = std::max<std::int64_t>(cfg.total_steps - cfg.warmup_steps, 1);
    const double progress =
        std::clamp(static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay_steps), 0.0, 1.0);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double global_grad_norm(const NamedParameters& params) {
    double total = 0.0;
    for (const auto& [name, p] : params) {
        for (double g : p.grad()) {
            total += g * g;
        }
    }
    return std::sqrt(total);
}

double clip_grad_norm(NamedParameters& params, double threshold) {
    const double norm = global_grad_norm(params);
    if (norm > threshold) {
        const double factor = threshold / norm;
        for (auto& [name, p] : params) {
            if (p.has_grad()) {
                for (auto& g : p.mutable_grad()) {
                    g *= factor;
                }
            }
        }
    }
    return norm;
}

StepStats AdamW::step(NamedParameters& params) {
    for (const auto& [name, p] : params) {
        for (double g : p.grad()) {
            if (!std::isfinite(g)) {
                throw DivergenceError("non-finite gradient in parameter '" + name + "' at optimizer step " +
                                      std::to_string(step_));
            }
        }
    }
    if (m_.empty()) {
        for (const auto& [name, p] : params) {
            m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
            v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("AdamW: parameter list changed between steps");
    }

    StepStats stats;
    stats.grad_norm = clip_grad_norm(params, cfg_.clip_norm);
    stats.clip_factor = stats.grad_norm > cfg_.clip_norm ? cfg_.clip_norm / stats.grad_norm : 1.0;
    stats.lr = scheduled_lr(cfg_, step_);

    const auto t = static_cast<double>(step_ + 1);
    const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].second;
        auto values = p.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        if (m.size() != values.size()) {
            throw ContractError("AdamW: moment buffer shape mismatch for '" + params[k].first + "'");
        }
        const auto grad = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            values[i] -= stats.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * values[i]);
        }
        p.zero_grad();
    }
    ++step_;
    return stats;
}

} // namespace occ::diff
