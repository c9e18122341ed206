// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/geometry.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace occ {

struct SceneSpec;

enum class SamplingStrategy { random, stratified, stratified_symmetric };

std::string to_string(SamplingStrategy s);
/// Throws ConfigError on unknown names.
SamplingStrategy parse_strategy(const std::string& name);

struct SamplingConfig {
    SamplingStrategy strategy = SamplingStrategy::stratified_symmetric;
    int bins = 5;
    double tau = 0.1;
    std::int64_t positives = 4096;
    std::int64_t negatives = 4096;
    /// Part of `negatives` drawn from [d - tau, d). Ignored unless the
    /// strategy is stratified_symmetric.
    std::int64_t symmetric = 816;
    std::uint64_t seed = 0;

    /// 150K positives, 150K negatives of which 30K symmetric.
    static SamplingConfig full_scale();
    /// 4096 / 4096 with 816 symmetric, so the stratified share splits into
    /// whole rays of `bins` draws.
    static SamplingConfig desk();

    void validate() const;
    std::int64_t symmetric_count() const;
    /// Free-space negatives requested. Stratified strategies draw whole rays
    /// of `bins` samples, so they round this up to a multiple of `bins`.
    std::int64_t free_count() const { return negatives - symmetric_count(); }

    static SamplingConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

enum class SampleKind : std::uint8_t { positive = 0, free = 1, symmetric = 2 };

/// Points in the ego frame with occupancy labels (1 = occupied). Positives
/// come first, then free-space negatives, then symmetric negatives.
struct LabeledQuerySet {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint32_t> ray_index;
    /// Distance along the source ray. Not serialized.
    std::vector<double> t;
    std::vector<SampleKind> kind;

    /// Rays with d <= tau, skipped for symmetric negatives.
    std::int64_t skipped_symmetric_rays = 0;
    /// Candidates discarded because they fell outside the ROI.
    std::int64_t discarded_out_of_roi = 0;

    std::size_t size() const { return points.size(); }
    std::int64_t positive_count() const;
    std::int64_t negative_count() const;
    void reserve(std::size_t n);
    void push(const Vec3& p, std::uint8_t label, std::uint32_t ray, double t_value, SampleKind k);
};

/// K + 1 edges of the equal partition of [a, b); the last edge is b exactly.
std::vector<double> bin_edges(double a, double b, int bins);

/// Part of the free segment [0, d) that lies inside the ROI, or an empty
/// interval. Random and stratified negatives are drawn from it.
Interval free_segment(const Ray& ray, const RoiBox& roi);

/// Labeled queries along LiDAR rays. Rays are visited in a seeded random
/// order, cycling with fresh draws when a pass does not fill the counts.
/// Every draw is keyed by (seed, ray, pass), so the result does not depend
/// on evaluation order.
LabeledQuerySet sample_queries(std::span<const Ray> rays, const SamplingConfig& cfg, const RoiBox& roi);

struct OracleAgreement {
    double overall = 1.0;
    double negatives = 1.0;
    double positives = 1.0;
    std::int64_t negative_count = 0;
    std::int64_t positive_count = 0;
};

/// Agreement of labels with simulator occupancy; 1.0 for empty sets.
OracleAgreement validate_against_oracle(const LabeledQuerySet& qs, const SceneSpec& scene);

// LQRY: "LQRY" | u32 version | u64 count | count x (3 x f32 point, u8 label,
// u32 ray index).
void write_lqry(const std::filesystem::path& path, const LabeledQuerySet& qs);
/// t and kind are not stored; kind is reconstructed from the label only.
LabeledQuerySet read_lqry(const std::filesystem::path& path);

} // namespace occ
