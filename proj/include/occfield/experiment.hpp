// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

// Multi-stage pipelines shared by the command line and the acceptance suite:
// config files for training runs, per-scene evaluation of a trained model and
// the sampling-strategy ablation.

#pragma once

#include "occfield/evaluation.hpp"
#include "occfield/model.hpp"
#include "occfield/simulator.hpp"
#include "occfield/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace occ {

/// Scene list in a run config: explicit files, generator seeds, or both
/// (files first).
struct SceneSource {
    std::vector<std::filesystem::path> files;
    std::vector<std::uint64_t> seeds;
    SceneGenConfig generator;

    std::vector<SceneSpec> load() const;
    bool empty() const { return files.empty() && seeds.empty(); }

    /// Keys: files (relative to base_dir), seeds, seed_range [first, count],
    /// generator.
    static SceneSource from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                 const std::string& context);
    nlohmann::json to_json() const;
};

/// Evaluation knobs for pointmap and occupancy scoring.
struct EvalConfig {
    PointmapEvalConfig pointmap;
    OccupancyEvalConfig occupancy;

    static EvalConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// The `train` / `ablate sampling` config file.
/// Keys: model, train, scenes, eval_scenes (ablation only), eval.
struct RunConfig {
    ModelConfig model = ModelConfig::desk();
    TrainConfig train;
    SceneSource scenes;
    SceneSource eval_scenes;
    EvalConfig eval;

    /// Applies a command-line seed to model initialization and training.
    void set_seed(std::uint64_t seed);

    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    nlohmann::json to_json() const;
};

/// Every LiDAR beam of the scene's sensor, elevation-major, as rays without
/// a hit distance.
std::vector<Ray> lidar_beam_rays(const LidarConfig& lidar);

/// Pointmap and occupancy scores of a trained model on one scene. GT rays are
/// simulated from the scene.
struct SceneScores {
    double absrel = 0.0;
    double chamfer = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
};

SceneScores evaluate_scene(std::shared_ptr<const OccupancyModel> model, const SceneSpec& scene,
                           const EvalConfig& cfg = {});
/// Per-metric mean over scenes.
SceneScores evaluate_scenes(std::shared_ptr<const OccupancyModel> model, std::span<const SceneSpec> scenes,
                            const EvalConfig& cfg = {});

struct AblationRow {
    SamplingStrategy strategy = SamplingStrategy::random;
    /// Mean loss over the last min(100, iterations) steps.
    double final_loss = 0.0;
    SceneScores scores;
};

/// Trains one model per sampling strategy (random, stratified,
/// stratified+symmetric) from the same initialization and scenes, then scores
/// each on the eval scenes (the training scenes when none are listed). When
/// out_dir is set each run writes into out_dir/<strategy>/.
std::vector<AblationRow> ablate_sampling(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir);

/// strategy,final_loss,absrel,chamfer,f1,iou
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

} // namespace occ
