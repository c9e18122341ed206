// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/geometry.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace occ {

/// Horizontal ground slab occupying z in [height - thickness, height].
struct GroundPlane {
    double height = 0.0;
    double thickness = 0.2;
};

/// Axis-aligned solid box (closed).
struct Box {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Constant(0.5);

    Vec3 min() const { return center - half_extents; }
    Vec3 max() const { return center + half_extents; }
};

/// Solid ball (closed).
struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};

using Primitive = std::variant<GroundPlane, Box, Sphere>;

/// Spinning LiDAR: azimuth_count evenly spaced azimuths starting at +x,
/// counter-clockwise, times the listed elevations.
struct LidarConfig {
    Vec3 origin = Vec3(0.0, 0.0, 1.8);
    int azimuth_count = 360;
    std::vector<double> elevations_deg;
    double max_range = 60.0;
};

/// Pinhole camera. Camera axes: x right, y down, z forward; yaw rotates
/// about +z from +x, positive pitch looks up.
struct Camera {
    std::string name;
    Vec3 position = Vec3(0.0, 0.0, 1.6);
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
    double fx = 16.0;
    double fy = 16.0;
    double cx = 16.0;
    double cy = 16.0;
    int width = 32;
    int height = 32;

    /// Unit direction through (u, v) in pixel coordinates (pixel centers at +0.5).
    Vec3 pixel_direction(double u, double v) const;
};

struct CameraRig {
    std::vector<Camera> cameras;
    double max_range = 60.0;

    /// count cameras at equal yaw spacing starting at yaw 0, square images
    /// of side `image_size` with the given horizontal field of view.
    static CameraRig surround(int count, int image_size, double hfov_deg = 90.0, double pitch_deg = -10.0,
                              const Vec3& position = Vec3(0.0, 0.0, 1.6));
};

/// A procedural scene. The rig is consumed only by the simulator; the model
/// sees rendered rasters, never calibration.
struct SceneSpec {
    std::uint64_t seed = 0;
    RoiBox roi = RoiBox::desk();
    std::vector<Primitive> primitives;
    LidarConfig lidar;
    CameraRig rig;

    /// Checks: >= 1 primitive, every primitive touches the ROI, >= 1 camera,
    /// positive image sizes, azimuth count and ranges.
    void validate() const;
};

/// Knobs for the procedural generator (the `scene gen` JSON config).
struct SceneGenConfig {
    RoiBox roi = RoiBox::desk();
    int min_boxes = 3;
    int max_boxes = 6;
    int min_spheres = 0;
    int max_spheres = 2;
    double min_range = 5.0;
    double max_range = 12.5;
    double floating_box_probability = 0.25;
    int camera_count = 4;
    int image_size = 32;
    int lidar_azimuths = 360;
    int lidar_elevations = 32;
    double lidar_min_elevation_deg = -40.0;
    double lidar_max_elevation_deg = 5.0;

    static SceneGenConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

SceneSpec generate_scene(std::uint64_t seed, const SceneGenConfig& cfg = {});

nlohmann::json scene_to_json(const SceneSpec& scene);
/// Strict: unknown keys or a version other than 1 raise ConfigError.
SceneSpec scene_from_json(const nlohmann::json& j);
void save_scene(const std::filesystem::path& path, const SceneSpec& scene);
SceneSpec load_scene(const std::filesystem::path& path);

/// Nearest intersection distance with any primitive, nullopt beyond
/// max_range. Origins inside a solid hit at 0.
std::optional<double> cast(const SceneSpec& scene, const Ray& ray, double max_range);
/// Uses the LiDAR max range.
std::optional<double> cast(const SceneSpec& scene, const Ray& ray);

/// Inside any closed solid.
bool occupied(const SceneSpec& scene, const Vec3& p);

/// Unit direction of LiDAR beam (elevation index, azimuth index).
Vec3 lidar_direction(const LidarConfig& lidar, int elevation, int azimuth);

/// One point per returning beam, elevation-major. Throws EmptySweepError
/// when nothing returns.
PointCloud simulate_lidar(const SceneSpec& scene);

/// Single-camera raster: inverse range (1/m) where the pixel ray hits, and a
/// 0/1 hit mask. Row-major, height x width.
struct CameraRaster {
    int height = 0;
    int width = 0;
    std::vector<double> inverse_depth;
    std::vector<double> mask;
};

/// Model input: one raster per camera slot, order fixed by the rig.
struct RenderedViews {
    std::vector<CameraRaster> cameras;

    bool operator==(const RenderedViews& other) const;
};

RenderedViews render_views(const SceneSpec& scene);

/// Zeroes every camera not listed in keep (indices into views.cameras),
/// preserving count and order.
RenderedViews drop_cameras(const RenderedViews& views, std::span<const int> keep);

/// Pixel rays of one camera, optionally supersampled `oversample` x
/// `oversample` per pixel.
std::vector<Ray> camera_rays(const Camera& camera, int oversample = 1);

// VIEW: "VIEW" | u32 version | u32 camera count | per camera u32 H, u32 W |
// per camera: inverse-depth plane then mask plane, f32 row-major.
void write_views(const std::filesystem::path& path, const RenderedViews& views);
RenderedViews read_views(const std::filesystem::path& path);

} // namespace occ
