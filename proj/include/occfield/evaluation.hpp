// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/geometry.hpp"
#include "occfield/rendering.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace occ {

struct SceneSpec;

struct AbsRelResult {
    double value = 0.0;
    std::int64_t evaluated = 0;
    /// Rays with gt <= 0.
    std::int64_t excluded = 0;
};

/// Mean |pred - gt| / gt over rays with gt > 0. Throws EmptyMetricError when
/// no ray qualifies.
AbsRelResult absrel(std::span<const double> pred, std::span<const double> gt);

/// Static 3-d tree over a point set for exact nearest-neighbor queries.
class KdTree {
public:
    explicit KdTree(std::span<const Vec3> points);

    /// Index of the nearest point and its Euclidean distance. Ties resolve to
    /// the lowest index, matching a linear scan.
    std::pair<std::size_t, double> nearest(const Vec3& q) const;
    std::size_t size() const { return points_.size(); }

private:
    struct Node {
        std::uint32_t point = 0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint8_t axis = 0;
    };

    std::int32_t build(std::vector<std::uint32_t>& idx, std::size_t lo, std::size_t hi, int depth);
    void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

    std::vector<Vec3> points_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
};

/// 0.5 * (mean NN distance a->b + mean NN distance b->a), meters.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);
/// Same quantity by exhaustive search.
double chamfer_brute_force(std::span<const Vec3> a, std::span<const Vec3> b);

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;
};

struct OccupancyScores {
    double f1 = 0.0;
    double iou = 0.0;
    ConfusionCounts counts;
    std::int64_t visible = 0;
};

/// Scores inside gt.visibility. IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN);
/// both 1 when the visible region holds no occupied voxel in either grid.
OccupancyScores occupancy_scores(const VoxelGrid& pred, const VoxelGrid& gt);

/// Voxels traversed by any camera pixel ray up to and including its first
/// hit (or its ROI exit when it misses). Rays are supersampled
/// `oversample` x `oversample` per pixel.
std::vector<std::uint8_t> visibility_mask(const SceneSpec& scene, const VoxelGrid& grid, int oversample = 2);

/// Grid line walk: linear indices of voxels the segment [t0, t1] of the ray
/// passes through, in order.
std::vector<std::int64_t> walk_voxels(const VoxelGrid& grid, const Ray& ray, double t0, double t1);

struct RankTable {
    std::vector<std::string> methods;
    /// "dataset/metric" labels.
    std::vector<std::string> columns;
    std::vector<bool> lower_is_better;
    /// scores[method][column]; nullopt marks a missing cell.
    std::vector<std::vector<std::optional<double>>> scores;
};

/// CSV: header "method,<dataset/metric>...", then "orientation,lower|higher...",
/// then one row per method. Empty cells are missing.
RankTable read_rank_table(const std::filesystem::path& path);
RankTable parse_rank_table(const std::string& csv);

/// Per-column ranks (ties share the minimum rank), ranks[method][column].
std::vector<std::vector<int>> column_ranks(const RankTable& table);
/// Mean rank per method. Throws IncompleteTableError naming a missing cell.
std::vector<double> average_rank(const RankTable& table);

struct MetricReport {
    std::map<std::string, double> metrics;
    std::map<std::string, std::int64_t> counts;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
};

struct PointmapEvalConfig {
    RayRenderConfig render;
    double weight_floor = 0.5;
};

/// Renders depths along GT LiDAR rays whose return lies in the ROI and scores
/// them: absrel over those rays, chamfer between the emitted cloud and the
/// GT returns. Rays must come from the scene's LiDAR (origin and hit
/// distance are checked: a wrong origin, or more than 1% of rays disagreeing
/// with cast(), raises ContractError; the few disagreeing rays are dropped).
MetricReport eval_pointmap(const OccupancyFn& field, const SceneSpec& scene, std::span<const Ray> gt_rays,
                           const RoiBox& roi, const PointmapEvalConfig& cfg = {});

/// Baseline point cloud against GT rays. When the cloud has one point per
/// ray, absrel uses |p - origin| as the predicted depth; chamfer is always
/// reported.
MetricReport eval_pointmap_cloud(const PointCloud& pred, std::span<const Ray> gt_rays, const RoiBox& roi);

struct OccupancyEvalConfig {
    Vec3 voxel_size = Vec3::Constant(0.4);
    VoxelRenderConfig voxel;
    int visibility_oversample = 2;
};

/// Voxelizes the field and the analytic oracle with the same samples and
/// scores them inside the cameras' visible region.
MetricReport eval_occupancy(const OccupancyFn& field, const SceneSpec& scene, const RoiBox& roi,
                            const OccupancyEvalConfig& cfg = {});

/// Ground-truth grid: oracle voxelization plus visibility mask.
VoxelGrid ground_truth_grid(const SceneSpec& scene, const RoiBox& roi, const OccupancyEvalConfig& cfg);

} // namespace occ
