// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace occ {

using Vec3 = Eigen::Vector3d;

/// Axis-aligned region of interest in the ego frame (meters). Boundaries are
/// inclusive.
class RoiBox {
public:
    RoiBox(const Vec3& min_corner, const Vec3& max_corner);

    /// [-40,40] x [-40,40] x [-1,5.4] m, the full-scale evaluation volume.
    static RoiBox full_scale();
    /// [-16,16] x [-16,16] x [-1,5.4] m, used by the desk-scale presets.
    static RoiBox desk();

    const Vec3& min() const { return min_; }
    const Vec3& max() const { return max_; }
    Vec3 extent() const { return max_ - min_; }
    Vec3 center() const { return 0.5 * (min_ + max_); }
    bool contains(const Vec3& p) const;

    bool operator==(const RoiBox& other) const { return min_ == other.min_ && max_ == other.max_; }

private:
    Vec3 min_;
    Vec3 max_;
};

/// Half-line origin + t * direction with unit direction. hit_distance is set
/// for returning LiDAR rays.
struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitX();
    std::optional<double> hit_distance;

    /// Validates |direction| = 1 (1e-9) and hit > 0.
    static Ray make(const Vec3& origin, const Vec3& direction, std::optional<double> hit = std::nullopt);
    Vec3 at(double t) const { return origin + t * direction; }
};

struct PointCloud {
    std::vector<Vec3> points;
    Vec3 sensor_origin = Vec3::Zero();

    /// Throws ValidationError on non-finite coordinates.
    void validate() const;
};

struct Interval {
    double enter = 0.0;
    double exit = 0.0;
    double length() const { return exit - enter; }
};

/// Binary occupancy over a regular grid covering the ROI. Linear index is
/// x + nx * (y + ny * z).
struct VoxelGrid {
    RoiBox roi = RoiBox::desk();
    Vec3 voxel_size = Vec3::Constant(0.4);
    std::array<std::int64_t, 3> dims{0, 0, 0};
    std::vector<std::uint8_t> occupancy;
    std::optional<std::vector<std::uint8_t>> visibility;

    /// Empty grid with dims computed from the ROI and voxel size.
    static VoxelGrid empty(const RoiBox& roi, const Vec3& voxel_size);

    std::int64_t count() const { return dims[0] * dims[1] * dims[2]; }
    std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return x + dims[0] * (y + dims[1] * z);
    }
    std::array<std::int64_t, 3> coords(std::int64_t linear) const;
    Vec3 voxel_min(std::int64_t x, std::int64_t y, std::int64_t z) const;
    Vec3 voxel_center(std::int64_t x, std::int64_t y, std::int64_t z) const;
    std::int64_t occupied_count() const;
};

/// dims = round((max - min) / voxel_size) per axis.
std::array<std::int64_t, 3> voxel_dims(const RoiBox& roi, const Vec3& voxel_size);

/// One ray per point: origin = sensor, direction = unit (point - sensor),
/// hit = distance. Throws DegenerateRayError listing coincident indices.
std::vector<Ray> rays_from_cloud(const PointCloud& cloud);

/// Affine map of the ROI onto [-1,1]^3. Throws OutOfRoiError outside.
Vec3 normalize_point(const Vec3& p, const RoiBox& roi);
Vec3 denormalize_point(const Vec3& q, const RoiBox& roi);

/// Slab intersection of the half-line with the box. enter is clamped to 0
/// for origins inside the box. nullopt when the ray misses.
std::optional<Interval> clip_ray_to_roi(const Ray& ray, const RoiBox& roi);

// LPCD: "LPCD" | u32 version | 3xf32 sensor origin | u64 count | count x 3 x f32.
void write_lpcd(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_lpcd(const std::filesystem::path& path);

// VOXG: "VOXG" | u32 version | 6xf32 roi | 3xf32 voxel size | 3xu32 dims |
// occupancy bits | u8 flag | visibility bits when flag == 1. Bits are packed
// LSB-first in linear-index order.
void write_voxg(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_voxg(const std::filesystem::path& path);

} // namespace occ
