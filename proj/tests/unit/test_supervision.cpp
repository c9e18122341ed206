// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/errors.hpp"
#include "occfield/rng.hpp"
#include "occfield/simulator.hpp"
#include "occfield/supervision.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

namespace occ {
namespace {

SamplingConfig small(SamplingStrategy strategy, std::int64_t pos, std::int64_t neg, std::int64_t sym = 0) {
    SamplingConfig c;
    c.strategy = strategy;
    c.positives = pos;
    c.negatives = neg;
    c.symmetric = sym;
    c.seed = 17;
    return c;
}

TEST(Bins, TenMetersFiveBins) {
    const auto e = bin_edges(0.0, 10.0, 5);
    ASSERT_EQ(e.size(), 6u);
    for (int k = 0; k <= 5; ++k) {
        EXPECT_NEAR(e[static_cast<std::size_t>(k)], 2.0 * k, 1e-12);
    }
    EXPECT_EQ(e.back(), 10.0);
}

TEST(Sampling, OneNegativePerBin) {
    const Ray ray = Ray::make(Vec3::Zero(), Vec3::UnitX(), 10.0);
    const auto qs = sample_queries(std::span(&ray, 1), small(SamplingStrategy::stratified, 5, 5), RoiBox::full_scale());
    std::vector<int> per_bin(5, 0);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        if (qs.labels[i] == 0) {
            ++per_bin[static_cast<std::size_t>(qs.t[i] / 2.0)];
        }
    }
    EXPECT_EQ(per_bin, std::vector<int>(5, 1));
}

TEST(Sampling, PositiveAndSymmetricIntervals) {
    const Ray ray = Ray::make(Vec3::Zero(), Vec3::UnitX(), 10.0);
    const auto qs = sample_queries(std::span(&ray, 1), small(SamplingStrategy::stratified_symmetric, 20, 30, 20),
                                   RoiBox::full_scale());
    std::map<SampleKind, int> kinds;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        ++kinds[qs.kind[i]];
        switch (qs.kind[i]) {
        case SampleKind::positive:
            EXPECT_GE(qs.t[i], 10.0);
            EXPECT_LT(qs.t[i], 10.1);
            EXPECT_EQ(qs.labels[i], 1);
            break;
        case SampleKind::symmetric:
            EXPECT_GE(qs.t[i], 9.9);
            EXPECT_LT(qs.t[i], 10.0);
            EXPECT_EQ(qs.labels[i], 0);
            break;
        case SampleKind::free:
            EXPECT_GE(qs.t[i], 0.0);
            EXPECT_LT(qs.t[i], 10.0);
            break;
        }
        EXPECT_LT((qs.points[i] - ray.at(qs.t[i])).norm(), 1e-12);
    }
    EXPECT_EQ(kinds[SampleKind::positive], 20);
    EXPECT_EQ(kinds[SampleKind::free], 10);
    EXPECT_EQ(kinds[SampleKind::symmetric], 20);
}

TEST(Sampling, FullScaleCounts) {
    const auto c = SamplingConfig::full_scale();
    EXPECT_EQ(c.positives, 150000);
    EXPECT_EQ(c.negatives, 150000);
    EXPECT_EQ(c.symmetric_count(), 30000);
    EXPECT_EQ(c.free_count(), 120000);
    EXPECT_EQ(c.bins, 5);
    EXPECT_DOUBLE_EQ(c.tau, 0.1);
}

TEST(Sampling, ShortRaysSkipSymmetric) {
    const std::vector<Ray> rays{Ray::make(Vec3::Zero(), Vec3::UnitX(), 0.05),
                                Ray::make(Vec3::Zero(), Vec3::UnitY(), 5.0)};
    const auto qs = sample_queries(rays, small(SamplingStrategy::stratified_symmetric, 4, 10, 5), RoiBox::full_scale());
    EXPECT_GT(qs.skipped_symmetric_rays, 0);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        if (qs.kind[i] == SampleKind::symmetric) {
            EXPECT_EQ(qs.ray_index[i], 1u);
        }
    }
}

TEST(Sampling, OutOfRoiIsUnsatisfiable) {
    const Ray ray = Ray::make(Vec3(100, 100, 0), Vec3::UnitX(), 10.0);
    EXPECT_THROW(sample_queries(std::span(&ray, 1), small(SamplingStrategy::random, 4, 4), RoiBox::desk()),
                 UnsatisfiableSamplingError);
}

TEST(Sampling, ConfigValidation) {
    auto c = small(SamplingStrategy::stratified_symmetric, 4, 4, 5);
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(SamplingStrategy::random, 4, 4);
    c.tau = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(SamplingStrategy::random, 0, 4);
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_strategy("uniform"), ConfigError);
    EXPECT_EQ(parse_strategy("stratified_symmetric"), SamplingStrategy::stratified_symmetric);
}

class SceneSampling : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(SceneSampling, BalancedInsideRoiAndSound) {
    const auto scene = generate_scene(GetParam());
    const auto rays = rays_from_cloud(simulate_lidar(scene));
    auto cfg = SamplingConfig::desk();
    cfg.seed = GetParam();
    const auto qs = sample_queries(rays, cfg, scene.roi);
    EXPECT_EQ(qs.positive_count(), cfg.positives);
    EXPECT_EQ(qs.negative_count(), cfg.negatives);
    for (const auto& p : qs.points) {
        ASSERT_TRUE(scene.roi.contains(p));
    }
    // Each stratified ray visit covers every bin of its free segment once.
    std::map<std::uint32_t, std::vector<double>> per_ray;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        if (qs.kind[i] == SampleKind::free) {
            per_ray[qs.ray_index[i]].push_back(qs.t[i]);
        }
    }
    int full_rays = 0;
    for (const auto& [r, ts] : per_ray) {
        if (ts.size() != static_cast<std::size_t>(cfg.bins)) {
            continue;
        }
        ++full_rays;
        const auto seg = free_segment(rays[r], scene.roi);
        const auto edges = bin_edges(seg.enter, seg.exit, cfg.bins);
        for (int b = 0; b < cfg.bins; ++b) {
            EXPECT_GE(ts[static_cast<std::size_t>(b)], edges[static_cast<std::size_t>(b)]);
            EXPECT_LT(ts[static_cast<std::size_t>(b)], edges[static_cast<std::size_t>(b) + 1]);
        }
    }
    EXPECT_GT(full_rays, 0);

    const auto agree = validate_against_oracle(qs, scene);
    EXPECT_EQ(agree.negatives, 1.0);
    EXPECT_GE(agree.positives, 0.95);
}

TEST_P(SceneSampling, Deterministic) {
    const auto scene = generate_scene(GetParam());
    const auto rays = rays_from_cloud(simulate_lidar(scene));
    auto cfg = SamplingConfig::desk();
    cfg.seed = 5;
    const auto a = sample_queries(rays, cfg, scene.roi);
    const auto b = sample_queries(rays, cfg, scene.roi);
    EXPECT_EQ(a.points, b.points);
    EXPECT_EQ(a.labels, b.labels);
    cfg.seed = 6;
    EXPECT_NE(sample_queries(rays, cfg, scene.roi).points, a.points);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SceneSampling, ::testing::Range<std::uint64_t>(0, 5));

TEST(Oracle, EmptySetAgreesFully) {
    const auto scene = generate_scene(0);
    const auto a = validate_against_oracle(LabeledQuerySet{}, scene);
    EXPECT_EQ(a.overall, 1.0);
    EXPECT_EQ(a.negatives, 1.0);
    EXPECT_EQ(a.positives, 1.0);
}

TEST(Oracle, CountsDisagreements) {
    SceneSpec scene;
    scene.primitives = {Box{Vec3(5, 0, 1), Vec3::Constant(1.0)}};
    LabeledQuerySet qs;
    qs.push(Vec3(5, 0, 1), 1, 0, 0.0, SampleKind::positive);
    qs.push(Vec3(0, 0, 1), 1, 0, 0.0, SampleKind::positive);
    qs.push(Vec3(0, 0, 1), 0, 0, 0.0, SampleKind::free);
    const auto a = validate_against_oracle(qs, scene);
    EXPECT_DOUBLE_EQ(a.positives, 0.5);
    EXPECT_DOUBLE_EQ(a.negatives, 1.0);
    EXPECT_NEAR(a.overall, 2.0 / 3.0, 1e-12);
}

TEST(Lqry, RoundTrip) {
    const auto scene = generate_scene(2);
    const auto rays = rays_from_cloud(simulate_lidar(scene));
    auto cfg = SamplingConfig::desk();
    cfg.positives = cfg.negatives = 200;
    cfg.symmetric = 40;
    const auto qs = sample_queries(rays, cfg, scene.roi);
    const auto path = std::filesystem::temp_directory_path() / "occfield_test.lqry";
    write_lqry(path, qs);
    const auto back = read_lqry(path);
    ASSERT_EQ(back.size(), qs.size());
    EXPECT_EQ(back.labels, qs.labels);
    EXPECT_EQ(back.ray_index, qs.ray_index);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        EXPECT_LT((back.points[i] - qs.points[i]).norm(), 1e-5);
    }
}

} // namespace
} // namespace occ
