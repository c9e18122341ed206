// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace occ {

class OccupancyFieldHandle;
struct SceneSpec;

/// Batched occupancy source: one probability per point, same order.
using OccupancyFn = std::function<std::vector<double>(std::span<const Vec3>)>;

/// Learned field behind a frozen handle. The handle must outlive the function.
OccupancyFn field_occupancy(const OccupancyFieldHandle& handle);
/// Analytic indicator: 1 inside any solid, 0 elsewhere.
OccupancyFn oracle_occupancy(const SceneSpec& scene);

struct RayRenderConfig {
    double step = 0.05;
    double max_range = 60.0;
    /// Marching stops once transmittance falls below this; the remaining
    /// terms are bounded by it times the range.
    double min_transmittance = 1e-12;
    /// Samples gathered per ray per field evaluation round.
    int segment = 64;
    /// Rays marched together per round.
    int batch_rays = 256;

    void validate() const;
};

struct RayIntegration {
    double depth = 0.0;
    double total_weight = 0.0;
    std::vector<double> weights;
    std::vector<double> transmittance;
};

/// d = sum t_i o_i T_i, T_i = prod_{j<i} (1 - o_j); not normalized.
RayIntegration integrate_samples(std::span<const double> t, std::span<const double> occupancy);

struct RayDepth {
    double depth = 0.0;
    double total_weight = 0.0;
    std::int64_t samples = 0;
};

/// Samples t_i = t_enter + i * step up to min(t_exit, max_range). nullopt when
/// the ray misses the ROI.
std::optional<RayDepth> render_ray_depth(const OccupancyFn& field, const Ray& ray, const RayRenderConfig& cfg,
                                         const RoiBox& roi);

/// Batched form of render_ray_depth with identical per-ray results.
std::vector<std::optional<RayDepth>> render_depths(const OccupancyFn& field, std::span<const Ray> rays,
                                                   const RayRenderConfig& cfg, const RoiBox& roi);

struct RenderedCloud {
    PointCloud cloud;
    /// Index of the source ray for every emitted point.
    std::vector<std::size_t> ray_index;
    /// Rays with no ROI intersection or total weight below the floor.
    std::int64_t dropped = 0;
};

/// One point origin + d * direction per ray whose total weight reaches
/// weight_floor.
RenderedCloud render_point_cloud(const OccupancyFn& field, std::span<const Ray> rays, const RayRenderConfig& cfg,
                                 const RoiBox& roi, double weight_floor = 0.5);

struct VoxelRenderConfig {
    int samples = 8;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    /// Voxels evaluated per field call.
    int batch_voxels = 4096;

    void validate() const;
};

/// Sample m of voxel `linear`: uniform inside the voxel, keyed by (seed,
/// voxel, m).
Vec3 voxel_sample(const VoxelGrid& grid, std::int64_t linear, int m, std::uint64_t seed);

/// O(V) = max over cfg.samples interior points; occupied iff O(V) >= threshold.
/// When `scores` is given it receives O(V) per voxel.
VoxelGrid render_voxel_grid(const OccupancyFn& field, const RoiBox& roi, const Vec3& voxel_size,
                            const VoxelRenderConfig& cfg, std::vector<double>* scores = nullptr);

/// Per-sample dump of one ray: ray,i,t,o,T,w.
void write_ray_debug_csv(const std::filesystem::path& path, std::span<const Ray> rays, const OccupancyFn& field,
                         const RayRenderConfig& cfg, const RoiBox& roi);

} // namespace occ
