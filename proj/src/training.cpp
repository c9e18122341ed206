// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/training.hpp"

#include "json_util.hpp"
#include "occfield/diffcore/ops.hpp"
#include "occfield/errors.hpp"
#include "occfield/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace occ {

using diff::Tensor;
using jsonutil::json;

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.iterations = 200000;
    c.warmup = 10000;
    c.peak_lr = 5e-5;
    c.batch_size = 6;
    c.queries_per_scene = 300000;
    c.checkpoint_every = 10000;
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train: " + msg); };
    if (iterations < 1 || warmup < 0 || warmup >= iterations) {
        fail("need iterations >= 1 and 0 <= warmup < iterations");
    }
    if (!(peak_lr > 0.0) || !(weight_decay >= 0.0) || !(clip_norm > 0.0)) {
        fail("peak_lr and clip_norm must be positive, weight_decay non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        fail("betas must lie in [0, 1)");
    }
    if (batch_size < 1 || queries_per_scene < 2 || checkpoint_every < 0) {
        fail("batch_size >= 1, queries_per_scene >= 2 and checkpoint_every >= 0 required");
    }
    if (!(symmetric_fraction >= 0.0 && symmetric_fraction < 1.0)) {
        fail("symmetric_fraction must lie in [0, 1)");
    }
    sampling(0).validate();
}

SamplingConfig TrainConfig::sampling(std::uint64_t sample_seed) const {
    SamplingConfig s;
    s.strategy = strategy;
    s.bins = bins;
    s.tau = tau;
    s.positives = queries_per_scene / 2;
    s.negatives = queries_per_scene - s.positives;
    s.symmetric = strategy == SamplingStrategy::stratified_symmetric
                      ? std::max<std::int64_t>(1, std::llround(symmetric_fraction * static_cast<double>(s.negatives)))
                      : 0;
    s.seed = sample_seed;
    return s;
}

diff::AdamWConfig TrainConfig::optimizer() const {
    diff::AdamWConfig o;
    o.peak_lr = peak_lr;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.weight_decay = weight_decay;
    o.warmup_steps = warmup;
    o.total_steps = iterations;
    o.clip_norm = clip_norm;
    return o;
}

TrainConfig TrainConfig::from_json(const json& j) {
    const std::string ctx = "train";
    jsonutil::reject_unknown_keys(j,
                                  {"iterations", "warmup", "peak_lr", "weight_decay", "beta1", "beta2", "clip_norm",
                                   "batch_size", "queries_per_scene", "strategy", "bins", "tau",
                                   "symmetric_fraction", "seed", "checkpoint_every"},
                                  ctx);
    TrainConfig c;
    c.iterations = jsonutil::get_or(j, "iterations", c.iterations, ctx);
    c.warmup = jsonutil::get_or(j, "warmup", c.warmup, ctx);
    c.peak_lr = jsonutil::get_or(j, "peak_lr", c.peak_lr, ctx);
    c.weight_decay = jsonutil::get_or(j, "weight_decay", c.weight_decay, ctx);
    c.beta1 = jsonutil::get_or(j, "beta1", c.beta1, ctx);
    c.beta2 = jsonutil::get_or(j, "beta2", c.beta2, ctx);
    c.clip_norm = jsonutil::get_or(j, "clip_norm", c.clip_norm, ctx);
    c.batch_size = jsonutil::get_or(j, "batch_size", c.batch_size, ctx);
    c.queries_per_scene = jsonutil::get_or(j, "queries_per_scene", c.queries_per_scene, ctx);
    if (j.contains("strategy")) {
        c.strategy = parse_strategy(jsonutil::get_required<std::string>(j, "strategy", ctx));
    }
    c.bins = jsonutil::get_or(j, "bins", c.bins, ctx);
    c.tau = jsonutil::get_or(j, "tau", c.tau, ctx);
    c.symmetric_fraction = jsonutil::get_or(j, "symmetric_fraction", c.symmetric_fraction, ctx);
    c.seed = jsonutil::get_or(j, "seed", c.seed, ctx);
    c.checkpoint_every = jsonutil::get_or(j, "checkpoint_every", c.checkpoint_every, ctx);
    c.validate();
    return c;
}

json TrainConfig::to_json() const {
    return json{{"iterations", iterations},
                {"warmup", warmup},
                {"peak_lr", peak_lr},
                {"weight_decay", weight_decay},
                {"beta1", beta1},
                {"beta2", beta2},
                {"clip_norm", clip_norm},
                {"batch_size", batch_size},
                {"queries_per_scene", queries_per_scene},
                {"strategy", to_string(strategy)},
                {"bins", bins},
                {"tau", tau},
                {"symmetric_fraction", symmetric_fraction},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every}};
}

double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels) {
    if (probs.empty()) {
        throw ContractError("bce_loss: no predictions");
    }
    if (probs.size() != labels.size()) {
        throw DimensionError("bce_loss: " + std::to_string(probs.size()) + " predictions, " +
                             std::to_string(labels.size()) + " labels");
    }
    const auto n = static_cast<std::int64_t>(probs.size());
    std::vector<double> logits(probs.size());
    std::vector<double> y(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (!(p > 0.0 && p < 1.0)) {
            throw OutOfRangeError("bce_loss: probability " + std::to_string(p) + " outside (0, 1)");
        }
        logits[i] = std::log(p) - std::log1p(-p);
        y[i] = labels[i] ? 1.0 : 0.0;
    }
    return diff::bce(Tensor::from({n}, std::move(logits)), Tensor::from({n}, std::move(y))).item();
}

TrainingScene prepare_scene(const SceneSpec& spec) {
    TrainingScene s;
    s.spec = spec;
    s.views = render_views(spec);
    s.rays = rays_from_cloud(simulate_lidar(spec));
    return s;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "step,loss,lr,grad_norm\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g\n", static_cast<long long>(r.step), r.loss, r.lr,
                      r.grad_norm);
        out << buf;
    }
    if (!out) {
        throw IoError("write failed on '" + path.string() + "'");
    }
}

TrainResult train(std::span<const TrainingScene> scenes, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const TrainOptions& options) {
    return train(scenes, cfg, std::make_shared<OccupancyModel>(model_cfg), options);
}

TrainResult train(std::span<const TrainingScene> scenes, const TrainConfig& cfg,
                  std::shared_ptr<OccupancyModel> model, const TrainOptions& options) {
    cfg.validate();
    if (scenes.empty()) {
        throw ContractError("train: no scenes");
    }
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        if (scenes[i].rays.empty()) {
            throw ContractError("train: scene " + std::to_string(i) + " has no LiDAR returns");
        }
    }
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
    }

    TrainResult result;
    result.model = std::move(model);
    auto& params = result.model->parameters();
    diff::AdamW optimizer(cfg.optimizer());
    std::string last_good = "none";

    auto save = [&](const std::string& name) {
        const auto path = *options.out_dir / name;
        save_checkpoint(path, *result.model);
        result.checkpoints.push_back(path);
        last_good = path.string();
    };

    std::size_t cursor = 0;
    for (std::int64_t step = 0; step < cfg.iterations; ++step) {
        std::vector<Tensor> losses;
        losses.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t s = cursor++ % scenes.size();
            const auto& scene = scenes[s];
            const auto sc = cfg.sampling(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), cursor));
            const auto qs = sample_queries(scene.rays, sc, result.model->config().roi);
            std::vector<double> labels(qs.labels.begin(), qs.labels.end());
            const Tensor grid = result.model->bev_grid(scene.views);
            const Tensor logits = result.model->decode_logits(grid, qs.points);
            losses.push_back(diff::bce(logits, Tensor::from({logits.dim(0), 1}, std::move(labels))));
        }
        Tensor loss = losses.front();
        for (std::size_t i = 1; i < losses.size(); ++i) {
            loss = diff::add(loss, losses[i]);
        }
        if (losses.size() > 1) {
            loss = diff::scale(loss, 1.0 / static_cast<double>(losses.size()));
        }
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                                  "; last good checkpoint: " + last_good);
        }
        diff::backward(loss);
        diff::StepStats stats;
        try {
            stats = optimizer.step(params);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " (training step " + std::to_string(step) +
                                  "; last good checkpoint: " + last_good + ")");
        }
        const LossRecord rec{step, value, stats.lr, stats.grad_norm};
        result.history.push_back(rec);
        if (options.on_step) {
            options.on_step(rec);
        }
        if (options.out_dir && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.iterations) {
            save("ckpt_" + std::to_string(step + 1) + ".vgtc");
        }
    }
    if (options.out_dir) {
        save("final.vgtc");
        write_loss_csv(*options.out_dir / "loss.csv", result.history);
    }
    return result;
}

} // namespace occ
