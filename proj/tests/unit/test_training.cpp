// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/errors.hpp"
#include "occfield/simulator.hpp"
#include "occfield/training.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace occ {
namespace {

std::vector<TrainingScene> tiny_scenes(int n) {
    SceneGenConfig g;
    g.camera_count = 2;
    g.image_size = 16;
    g.lidar_azimuths = 90;
    g.lidar_elevations = 8;
    std::vector<TrainingScene> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(prepare_scene(generate_scene(static_cast<std::uint64_t>(i), g)));
    }
    return out;
}

TrainConfig short_run(std::int64_t iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.warmup = 2;
    c.queries_per_scene = 64;
    c.checkpoint_every = 0;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Bce, Examples) {
    const std::vector<double> half{0.5, 0.5};
    const std::vector<std::uint8_t> mixed{1, 0};
    EXPECT_NEAR(bce_loss(half, mixed), std::log(2.0), 1e-12);
    const std::vector<double> p{0.9};
    const std::vector<std::uint8_t> zero{0};
    EXPECT_NEAR(bce_loss(p, zero), -std::log(0.1), 1e-12);
    EXPECT_NEAR(bce_loss(p, zero), 2.3026, 1e-4);
}

TEST(Bce, ConfidentAndCorrect) {
    const double hi = 1.0 / (1.0 + std::exp(-20.0));
    const double lo = 1.0 / (1.0 + std::exp(20.0));
    const std::vector<double> p{hi, lo};
    const std::vector<std::uint8_t> y{1, 0};
    EXPECT_LT(bce_loss(p, y), 1e-6);
}

TEST(Bce, Errors) {
    EXPECT_THROW(bce_loss({}, {}), ContractError);
    const std::vector<double> p{0.5};
    const std::vector<std::uint8_t> y{1, 0};
    EXPECT_THROW(bce_loss(p, y), DimensionError);
}

TEST(Config, ValidationAndJson) {
    auto c = TrainConfig{};
    c.warmup = c.iterations;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"learning_rate", 1e-3}}), ConfigError);
    const auto j = TrainConfig::full_scale().to_json();
    EXPECT_EQ(TrainConfig::from_json(j).to_json(), j);
    const auto full = TrainConfig::full_scale();
    EXPECT_EQ(full.iterations, 200000);
    EXPECT_EQ(full.warmup, 10000);
    EXPECT_DOUBLE_EQ(full.peak_lr, 5e-5);
}

TEST(Config, BalancedSampling) {
    const TrainConfig c;
    const auto s = c.sampling(3);
    EXPECT_EQ(s.positives, s.negatives);
    EXPECT_EQ(s.positives + s.negatives, c.queries_per_scene);
    EXPECT_EQ(s.symmetric_count(), std::llround(0.2 * static_cast<double>(s.negatives)));
    EXPECT_EQ(s.bins, 5);
    EXPECT_DOUBLE_EQ(s.tau, 0.1);
}

TEST(Train, FirstLossNearLn2AndHistory) {
    const auto scenes = tiny_scenes(2);
    const auto dir = std::filesystem::temp_directory_path() / "occfield_test_train";
    std::filesystem::remove_all(dir);
    TrainOptions opt;
    opt.out_dir = dir;
    int calls = 0;
    opt.on_step = [&](const LossRecord&) { ++calls; };
    auto cfg = short_run(6);
    cfg.checkpoint_every = 4;
    const auto r = train(scenes, cfg, ModelConfig::tiny(), opt);
    ASSERT_EQ(r.history.size(), 6u);
    EXPECT_EQ(calls, 6);
    EXPECT_NEAR(r.history[0].loss, std::log(2.0), 0.15);
    EXPECT_EQ(r.history[0].lr, 0.0);
    EXPECT_GT(r.history[1].lr, 0.0);
    EXPECT_TRUE(std::filesystem::exists(dir / "ckpt_4.vgtc"));
    EXPECT_TRUE(std::filesystem::exists(dir / "final.vgtc"));

    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,loss,lr,grad_norm");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 6);
}

TEST(Train, Deterministic) {
    const auto scenes = tiny_scenes(2);
    const auto base = std::filesystem::temp_directory_path() / "occfield_test_det";
    std::filesystem::remove_all(base);
    for (const char* name : {"a", "b"}) {
        TrainOptions opt;
        opt.out_dir = base / name;
        train(scenes, short_run(5), ModelConfig::tiny(), opt);
    }
    EXPECT_EQ(slurp(base / "a" / "final.vgtc"), slurp(base / "b" / "final.vgtc"));
    EXPECT_EQ(slurp(base / "a" / "loss.csv"), slurp(base / "b" / "loss.csv"));

    auto other = short_run(5);
    other.seed = 1;
    TrainOptions opt;
    opt.out_dir = base / "c";
    train(scenes, other, ModelConfig::tiny(), opt);
    EXPECT_NE(slurp(base / "a" / "final.vgtc"), slurp(base / "c" / "final.vgtc"));
}

TEST(Train, DivergenceNamesStepAndCheckpoint) {
    const auto scenes = tiny_scenes(1);
    auto model = std::make_shared<OccupancyModel>(ModelConfig::tiny());
    for (auto& [name, t] : model->parameters()) {
        if (name.rfind("decoder.out", 0) == 0) {
            t.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    try {
        train(scenes, short_run(3), model);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("last good checkpoint"), std::string::npos) << msg;
    }
}

TEST(Train, Preconditions) {
    const std::vector<TrainingScene> none;
    EXPECT_THROW(train(none, short_run(3), ModelConfig::tiny()), ContractError);
    auto scenes = tiny_scenes(1);
    scenes[0].rays.clear();
    EXPECT_THROW(train(scenes, short_run(3), ModelConfig::tiny()), ContractError);
}

TEST(Train, ClippedUpdatesReduceLoss) {
    const auto scenes = tiny_scenes(1);
    auto cfg = short_run(150);
    cfg.warmup = 10;
    cfg.peak_lr = 3e-3;
    const auto r = train(scenes, cfg, ModelConfig::tiny());
    double head = 0.0;
    double tail = 0.0;
    for (int i = 0; i < 20; ++i) {
        head += r.history[static_cast<std::size_t>(i)].loss;
        tail += r.history[r.history.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    EXPECT_LT(tail, head);
}

} // namespace
} // namespace occ
