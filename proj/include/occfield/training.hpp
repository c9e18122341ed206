// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/diffcore/optim.hpp"
#include "occfield/diffcore/tensor.hpp"
#include "occfield/model.hpp"
#include "occfield/simulator.hpp"
#include "occfield/supervision.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace occ {

struct TrainConfig {
    std::int64_t iterations = 2000;
    std::int64_t warmup = 100;
    double peak_lr = 2e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double clip_norm = 1.0;
    int batch_size = 2;
    /// Split evenly between positives and negatives.
    std::int64_t queries_per_scene = 1024;
    SamplingStrategy strategy = SamplingStrategy::stratified_symmetric;
    int bins = 5;
    double tau = 0.1;
    /// Share of the negatives drawn from [d - tau, d).
    double symmetric_fraction = 0.2;
    std::uint64_t seed = 0;
    /// Write a checkpoint every N steps (0 = only the final one).
    std::int64_t checkpoint_every = 500;

    /// 200K iterations, 10K warmup, peak lr 5e-5, batch 6.
    static TrainConfig full_scale();

    void validate() const;
    /// Sampling counts for one scene at one step.
    SamplingConfig sampling(std::uint64_t seed) const;
    diff::AdamWConfig optimizer() const;

    static TrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Binary cross-entropy of probabilities computed through logits:
/// logits = log(p / (1 - p)). Throws ContractError on empty input.
double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels);

/// Scene plus the derived inputs training needs: rendered views and the
/// returning LiDAR rays.
struct TrainingScene {
    SceneSpec spec;
    RenderedViews views;
    std::vector<Ray> rays;
};

TrainingScene prepare_scene(const SceneSpec& spec);

struct LossRecord {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

struct TrainOptions {
    /// When set: loss.csv, ckpt_<step>.vgtc and final.vgtc are written here.
    std::optional<std::filesystem::path> out_dir;
    /// Called after every step.
    std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
    std::shared_ptr<OccupancyModel> model;
    std::vector<LossRecord> history;
    std::vector<std::filesystem::path> checkpoints;
};

/// Round-robin over scenes, fresh queries each step, AdamW with warmup and
/// cosine decay. A non-finite loss or gradient raises DivergenceError naming
/// the step and the last checkpoint written.
TrainResult train(std::span<const TrainingScene> scenes, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const TrainOptions& options = {});

/// Same loop continuing from an existing model.
TrainResult train(std::span<const TrainingScene> scenes, const TrainConfig& cfg,
                  std::shared_ptr<OccupancyModel> model, const TrainOptions& options = {});

} // namespace occ
