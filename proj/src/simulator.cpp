// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/simulator.hpp"

#include "binio.hpp"
#include "json_util.hpp"
#include "occfield/errors.hpp"
#include "occfield/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>

namespace occ {

using jsonutil::json;

namespace {

constexpr int kSceneVersion = 1;
constexpr std::uint32_t kViewVersion = 1;

double deg2rad(double deg) { return deg * M_PI / 180.0; }

std::optional<double> slab_hit(const Vec3& lo, const Vec3& hi, const Ray& ray, bool unbounded_xy) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = unbounded_xy ? 2 : 0; a < 3; ++a) {
        const double o = ray.origin[a];
        const double d = ray.direction[a];
        if (d == 0.0) {
            if (o < lo[a] || o > hi[a]) {
                return std::nullopt;
            }
            continue;
        }
        double t0 = (lo[a] - o) / d;
        double t1 = (hi[a] - o) / d;
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    if (t_far < t_near || t_far < 0.0) {
        return std::nullopt;
    }
    return std::max(t_near, 0.0);
}

std::optional<double> hit_primitive(const Primitive& prim, const Ray& ray) {
    return std::visit(
        [&](const auto& p) -> std::optional<double> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, GroundPlane>) {
                return slab_hit(Vec3(0, 0, p.height - p.thickness), Vec3(0, 0, p.height), ray, true);
            } else if constexpr (std::is_same_v<T, Box>) {
                return slab_hit(p.min(), p.max(), ray, false);
            } else {
                const Vec3 oc = ray.origin - p.center;
                const double b = oc.dot(ray.direction);
                const double c = oc.squaredNorm() - p.radius * p.radius;
                const double disc = b * b - c;
                if (disc < 0.0) {
                    return std::nullopt;
                }
                const double s = std::sqrt(disc);
                const double t0 = -b - s;
                const double t1 = -b + s;
                if (t1 < 0.0) {
                    return std::nullopt;
                }
                return t0 >= 0.0 ? t0 : 0.0;
            }
        },
        prim);
}

bool inside_primitive(const Primitive& prim, const Vec3& q) {
    return std::visit(
        [&](const auto& p) -> bool {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, GroundPlane>) {
                return q.z() >= p.height - p.thickness && q.z() <= p.height;
            } else if constexpr (std::is_same_v<T, Box>) {
                return (q.array() >= p.min().array()).all() && (q.array() <= p.max().array()).all();
            } else {
                return (q - p.center).squaredNorm() <= p.radius * p.radius;
            }
        },
        prim);
}

bool touches_roi(const Primitive& prim, const RoiBox& roi) {
    return std::visit(
        [&](const auto& p) -> bool {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, GroundPlane>) {
                return p.height >= roi.min().z() && p.height - p.thickness <= roi.max().z();
            } else if constexpr (std::is_same_v<T, Box>) {
                return (p.max().array() >= roi.min().array()).all() && (p.min().array() <= roi.max().array()).all();
            } else {
                const Vec3 closest = p.center.cwiseMax(roi.min()).cwiseMin(roi.max());
                return (closest - p.center).squaredNorm() <= p.radius * p.radius;
            }
        },
        prim);
}

json primitive_to_json(const Primitive& prim) {
    return std::visit(
        [](const auto& p) -> json {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, GroundPlane>) {
                return json{{"type", "ground"}, {"height", p.height}, {"thickness", p.thickness}};
            } else if constexpr (std::is_same_v<T, Box>) {
                return json{{"type", "box"},
                            {"center", jsonutil::vec3_to(p.center)},
                            {"half_extents", jsonutil::vec3_to(p.half_extents)}};
            } else {
                return json{{"type", "sphere"}, {"center", jsonutil::vec3_to(p.center)}, {"radius", p.radius}};
            }
        },
        prim);
}

Primitive primitive_from_json(const json& j, const std::string& ctx) {
    const auto type = jsonutil::get_required<std::string>(j, "type", ctx);
    if (type == "ground") {
        jsonutil::reject_unknown_keys(j, {"type", "height", "thickness"}, ctx);
        GroundPlane g;
        g.height = jsonutil::get_or(j, "height", 0.0, ctx);
        g.thickness = jsonutil::get_or(j, "thickness", 0.2, ctx);
        if (!(g.thickness > 0.0)) {
            throw ConfigError(ctx + ".thickness must be positive");
        }
        return g;
    }
    if (type == "box") {
        jsonutil::reject_unknown_keys(j, {"type", "center", "half_extents"}, ctx);
        Box b;
        b.center = jsonutil::vec3_from(j.at("center"), ctx + ".center");
        b.half_extents = jsonutil::vec3_from(j.at("half_extents"), ctx + ".half_extents");
        if (!(b.half_extents.array() > 0.0).all()) {
            throw ConfigError(ctx + ".half_extents must be positive");
        }
        return b;
    }
    if (type == "sphere") {
        jsonutil::reject_unknown_keys(j, {"type", "center", "radius"}, ctx);
        Sphere s;
        s.center = jsonutil::vec3_from(j.at("center"), ctx + ".center");
        s.radius = jsonutil::get_required<double>(j, "radius", ctx);
        if (!(s.radius > 0.0)) {
            throw ConfigError(ctx + ".radius must be positive");
        }
        return s;
    }
    throw ConfigError(ctx + ".type: unknown primitive type '" + type + "'");
}

} // namespace

Vec3 Camera::pixel_direction(double u, double v) const {
    const double yaw = deg2rad(yaw_deg);
    const double pitch = deg2rad(pitch_deg);
    const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
    const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Vec3 down = forward.cross(right);
    const Vec3 d = ((u - cx) / fx) * right + ((v - cy) / fy) * down + forward;
    return d.normalized();
}

CameraRig CameraRig::surround(int count, int image_size, double hfov_deg, double pitch_deg, const Vec3& position) {
    CameraRig rig;
    const double focal = 0.5 * image_size / std::tan(deg2rad(0.5 * hfov_deg));
    for (int i = 0; i < count; ++i) {
        Camera cam;
        cam.name = "cam" + std::to_string(i);
        cam.position = position;
        cam.yaw_deg = 360.0 * i / count;
        cam.pitch_deg = pitch_deg;
        cam.fx = cam.fy = focal;
        cam.cx = cam.cy = 0.5 * image_size;
        cam.width = cam.height = image_size;
        rig.cameras.push_back(cam);
    }
    return rig;
}

void SceneSpec::validate() const {
    if (primitives.empty()) {
        throw ValidationError("scene has no primitives");
    }
    for (std::size_t i = 0; i < primitives.size(); ++i) {
        if (!touches_roi(primitives[i], roi)) {
            throw ValidationError("primitive " + std::to_string(i) + " does not intersect the ROI");
        }
    }
    if (rig.cameras.empty()) {
        throw ValidationError("scene rig has no cameras");
    }
    for (const auto& cam : rig.cameras) {
        if (cam.width <= 0 || cam.height <= 0 || !(cam.fx > 0.0) || !(cam.fy > 0.0)) {
            throw ValidationError("camera '" + cam.name + "' has invalid intrinsics or image size");
        }
    }
    if (!(rig.max_range > 0.0)) {
        throw ValidationError("rig max_range must be positive");
    }
    if (lidar.azimuth_count <= 0 || lidar.elevations_deg.empty() || !(lidar.max_range > 0.0)) {
        throw ValidationError("lidar needs azimuths, elevations and a positive max range");
    }
}

SceneGenConfig SceneGenConfig::from_json(const json& j) {
    const std::string ctx = "scene_gen";
    jsonutil::reject_unknown_keys(j,
                                  {"roi", "min_boxes", "max_boxes", "min_spheres", "max_spheres", "min_range",
                                   "max_range", "floating_box_probability", "camera_count", "image_size",
                                   "lidar_azimuths", "lidar_elevations", "lidar_min_elevation_deg",
                                   "lidar_max_elevation_deg"},
                                  ctx);
    SceneGenConfig c;
    if (j.contains("roi")) {
        c.roi = jsonutil::roi_from(j.at("roi"), ctx + ".roi");
    }
    c.min_boxes = jsonutil::get_or(j, "min_boxes", c.min_boxes, ctx);
    c.max_boxes = jsonutil::get_or(j, "max_boxes", c.max_boxes, ctx);
    c.min_spheres = jsonutil::get_or(j, "min_spheres", c.min_spheres, ctx);
    c.max_spheres = jsonutil::get_or(j, "max_spheres", c.max_spheres, ctx);
    c.min_range = jsonutil::get_or(j, "min_range", c.min_range, ctx);
    c.max_range = jsonutil::get_or(j, "max_range", c.max_range, ctx);
    c.floating_box_probability = jsonutil::get_or(j, "floating_box_probability", c.floating_box_probability, ctx);
    c.camera_count = jsonutil::get_or(j, "camera_count", c.camera_count, ctx);
    c.image_size = jsonutil::get_or(j, "image_size", c.image_size, ctx);
    c.lidar_azimuths = jsonutil::get_or(j, "lidar_azimuths", c.lidar_azimuths, ctx);
    c.lidar_elevations = jsonutil::get_or(j, "lidar_elevations", c.lidar_elevations, ctx);
    c.lidar_min_elevation_deg = jsonutil::get_or(j, "lidar_min_elevation_deg", c.lidar_min_elevation_deg, ctx);
    c.lidar_max_elevation_deg = jsonutil::get_or(j, "lidar_max_elevation_deg", c.lidar_max_elevation_deg, ctx);
    if (c.min_boxes < 0 || c.max_boxes < c.min_boxes) {
        throw ConfigError(ctx + ": need 0 <= min_boxes <= max_boxes");
    }
    if (c.min_spheres < 0 || c.max_spheres < c.min_spheres) {
        throw ConfigError(ctx + ": need 0 <= min_spheres <= max_spheres");
    }
    if (!(c.min_range > 0.0) || c.max_range < c.min_range) {
        throw ConfigError(ctx + ": need 0 < min_range <= max_range");
    }
    if (c.camera_count < 1 || c.image_size < 1) {
        throw ConfigError(ctx + ": camera_count and image_size must be positive");
    }
    if (c.lidar_azimuths < 1 || c.lidar_elevations < 1) {
        throw ConfigError(ctx + ": lidar_azimuths and lidar_elevations must be positive");
    }
    return c;
}

json SceneGenConfig::to_json() const {
    return json{{"roi", jsonutil::roi_to(roi)},
                {"min_boxes", min_boxes},
                {"max_boxes", max_boxes},
                {"min_spheres", min_spheres},
                {"max_spheres", max_spheres},
                {"min_range", min_range},
                {"max_range", max_range},
                {"floating_box_probability", floating_box_probability},
                {"camera_count", camera_count},
                {"image_size", image_size},
                {"lidar_azimuths", lidar_azimuths},
                {"lidar_elevations", lidar_elevations},
                {"lidar_min_elevation_deg", lidar_min_elevation_deg},
                {"lidar_max_elevation_deg", lidar_max_elevation_deg}};
}

SceneSpec generate_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
    Rng rng(derive_seed(seed, 0x5CE4E));
    SceneSpec scene;
    scene.seed = seed;
    scene.roi = cfg.roi;
    scene.primitives.emplace_back(GroundPlane{});

    // Keep objects clear of the ROI walls so every solid lies inside it.
    const double wall = std::min(cfg.roi.max().x(), cfg.roi.max().y()) - 0.5;
    auto place = [&](double footprint) {
        const double r = rng.uniform(cfg.min_range, std::min(cfg.max_range, wall - footprint));
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        return Vec3(r * std::cos(a), r * std::sin(a), 0.0);
    };

    const auto boxes = cfg.min_boxes + static_cast<int>(rng.index(cfg.max_boxes - cfg.min_boxes + 1));
    for (int i = 0; i < boxes; ++i) {
        Box b;
        b.half_extents.x() = rng.uniform(0.5, 1.8);
        b.half_extents.y() = rng.uniform(0.5, 1.8);
        const bool floating = rng.uniform() < cfg.floating_box_probability;
        const double bottom = floating ? rng.uniform(1.0, 2.0) : 0.0;
        const double height = floating ? rng.uniform(0.6, 1.5) : rng.uniform(1.0, 3.0);
        b.half_extents.z() = 0.5 * height;
        b.center = place(std::hypot(b.half_extents.x(), b.half_extents.y()));
        b.center.z() = bottom + 0.5 * height;
        scene.primitives.emplace_back(b);
    }
    const auto spheres = cfg.min_spheres + static_cast<int>(rng.index(cfg.max_spheres - cfg.min_spheres + 1));
    for (int i = 0; i < spheres; ++i) {
        Sphere s;
        s.radius = rng.uniform(0.5, 1.2);
        s.center = place(s.radius);
        s.center.z() = s.radius;
        scene.primitives.emplace_back(s);
    }

    scene.lidar.origin = Vec3(0.0, 0.0, 1.8);
    scene.lidar.azimuth_count = cfg.lidar_azimuths;
    scene.lidar.max_range = 60.0;
    for (int i = 0; i < cfg.lidar_elevations; ++i) {
        const double f = cfg.lidar_elevations == 1 ? 0.0 : static_cast<double>(i) / (cfg.lidar_elevations - 1);
        scene.lidar.elevations_deg.push_back(cfg.lidar_min_elevation_deg +
                                             f * (cfg.lidar_max_elevation_deg - cfg.lidar_min_elevation_deg));
    }
    scene.rig = CameraRig::surround(cfg.camera_count, cfg.image_size);
    scene.validate();
    return scene;
}

json scene_to_json(const SceneSpec& scene) {
    json prims = json::array();
    for (const auto& p : scene.primitives) {
        prims.push_back(primitive_to_json(p));
    }
    json cams = json::array();
    for (const auto& c : scene.rig.cameras) {
        cams.push_back(json{{"name", c.name},
                            {"position", jsonutil::vec3_to(c.position)},
                            {"yaw_deg", c.yaw_deg},
                            {"pitch_deg", c.pitch_deg},
                            {"fx", c.fx},
                            {"fy", c.fy},
                            {"cx", c.cx},
                            {"cy", c.cy},
                            {"width", c.width},
                            {"height", c.height}});
    }
    return json{{"version", kSceneVersion},
                {"seed", scene.seed},
                {"roi", jsonutil::roi_to(scene.roi)},
                {"primitives", prims},
                {"lidar",
                 {{"origin", jsonutil::vec3_to(scene.lidar.origin)},
                  {"azimuth_count", scene.lidar.azimuth_count},
                  {"elevations_deg", scene.lidar.elevations_deg},
                  {"max_range", scene.lidar.max_range}}},
                {"rig", {{"max_range", scene.rig.max_range}, {"cameras", cams}}}};
}

SceneSpec scene_from_json(const json& j) {
    const std::string ctx = "scene";
    jsonutil::reject_unknown_keys(j, {"version", "seed", "roi", "primitives", "lidar", "rig"}, ctx);
    const auto version = jsonutil::get_required<int>(j, "version", ctx);
    if (version != kSceneVersion) {
        throw ConfigError(ctx + ".version: unsupported scene version " + std::to_string(version));
    }
    SceneSpec scene;
    scene.seed = jsonutil::get_or<std::uint64_t>(j, "seed", 0, ctx);
    scene.roi = jsonutil::roi_from(j.at("roi"), ctx + ".roi");
    const auto& prims = j.at("primitives");
    if (!prims.is_array()) {
        throw ConfigError(ctx + ".primitives: expected an array");
    }
    for (std::size_t i = 0; i < prims.size(); ++i) {
        scene.primitives.push_back(primitive_from_json(prims[i], ctx + ".primitives[" + std::to_string(i) + "]"));
    }

    const auto& lj = j.at("lidar");
    jsonutil::reject_unknown_keys(lj, {"origin", "azimuth_count", "elevations_deg", "max_range"}, ctx + ".lidar");
    scene.lidar.origin = jsonutil::vec3_from(lj.at("origin"), ctx + ".lidar.origin");
    scene.lidar.azimuth_count = jsonutil::get_required<int>(lj, "azimuth_count", ctx + ".lidar");
    scene.lidar.elevations_deg = jsonutil::get_required<std::vector<double>>(lj, "elevations_deg", ctx + ".lidar");
    scene.lidar.max_range = jsonutil::get_required<double>(lj, "max_range", ctx + ".lidar");

    const auto& rj = j.at("rig");
    jsonutil::reject_unknown_keys(rj, {"max_range", "cameras"}, ctx + ".rig");
    scene.rig.max_range = jsonutil::get_or(rj, "max_range", 60.0, ctx + ".rig");
    const auto& cams = rj.at("cameras");
    if (!cams.is_array()) {
        throw ConfigError(ctx + ".rig.cameras: expected an array");
    }
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string cctx = ctx + ".rig.cameras[" + std::to_string(i) + "]";
        const auto& cj = cams[i];
        jsonutil::reject_unknown_keys(
            cj, {"name", "position", "yaw_deg", "pitch_deg", "fx", "fy", "cx", "cy", "width", "height"}, cctx);
        Camera c;
        c.name = jsonutil::get_or<std::string>(cj, "name", "cam" + std::to_string(i), cctx);
        c.position = jsonutil::vec3_from(cj.at("position"), cctx + ".position");
        c.yaw_deg = jsonutil::get_required<double>(cj, "yaw_deg", cctx);
        c.pitch_deg = jsonutil::get_or(cj, "pitch_deg", 0.0, cctx);
        c.fx = jsonutil::get_required<double>(cj, "fx", cctx);
        c.fy = jsonutil::get_required<double>(cj, "fy", cctx);
        c.cx = jsonutil::get_required<double>(cj, "cx", cctx);
        c.cy = jsonutil::get_required<double>(cj, "cy", cctx);
        c.width = jsonutil::get_required<int>(cj, "width", cctx);
        c.height = jsonutil::get_required<int>(cj, "height", cctx);
        scene.rig.cameras.push_back(c);
    }
    try {
        scene.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(ctx + ": " + e.what());
    }
    return scene;
}

void save_scene(const std::filesystem::path& path, const SceneSpec& scene) {
    jsonutil::save_file(path, scene_to_json(scene));
}

SceneSpec load_scene(const std::filesystem::path& path) { return scene_from_json(jsonutil::load_file(path)); }

std::optional<double> cast(const SceneSpec& scene, const Ray& ray, double max_range) {
    std::optional<double> best;
    for (const auto& prim : scene.primitives) {
        const auto t = hit_primitive(prim, ray);
        if (t && *t <= max_range && (!best || *t < *best)) {
            best = t;
        }
    }
    return best;
}

std::optional<double> cast(const SceneSpec& scene, const Ray& ray) { return cast(scene, ray, scene.lidar.max_range); }

bool occupied(const SceneSpec& scene, const Vec3& p) {
    return std::any_of(scene.primitives.begin(), scene.primitives.end(),
                       [&](const Primitive& prim) { return inside_primitive(prim, p); });
}

Vec3 lidar_direction(const LidarConfig& lidar, int elevation, int azimuth) {
    const double e = deg2rad(lidar.elevations_deg.at(static_cast<std::size_t>(elevation)));
    const double a = 2.0 * M_PI * azimuth / lidar.azimuth_count;
    return Vec3(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)).normalized();
}

PointCloud simulate_lidar(const SceneSpec& scene) {
    const auto& lidar = scene.lidar;
    if (lidar.azimuth_count <= 0 || lidar.elevations_deg.empty()) {
        throw ValidationError("simulate_lidar: scene has no LiDAR pattern");
    }
    PointCloud cloud;
    cloud.sensor_origin = lidar.origin;
    for (int e = 0; e < static_cast<int>(lidar.elevations_deg.size()); ++e) {
        for (int a = 0; a < lidar.azimuth_count; ++a) {
            const Ray ray{lidar.origin, lidar_direction(lidar, e, a), std::nullopt};
            const auto t = cast(scene, ray, lidar.max_range);
            if (t && *t > 0.0) {
                cloud.points.push_back(ray.at(*t));
            }
        }
    }
    if (cloud.points.empty()) {
        throw EmptySweepError("simulated LiDAR sweep returned no points; the scene is misconfigured");
    }
    return cloud;
}

bool RenderedViews::operator==(const RenderedViews& other) const {
    if (cameras.size() != other.cameras.size()) {
        return false;
    }
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const auto& a = cameras[i];
        const auto& b = other.cameras[i];
        if (a.height != b.height || a.width != b.width || a.inverse_depth != b.inverse_depth || a.mask != b.mask) {
            return false;
        }
    }
    return true;
}

std::vector<Ray> camera_rays(const Camera& camera, int oversample) {
    if (oversample < 1) {
        throw ValidationError("camera_rays: oversample must be >= 1");
    }
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(camera.width) * camera.height * oversample * oversample);
    for (int v = 0; v < camera.height * oversample; ++v) {
        for (int u = 0; u < camera.width * oversample; ++u) {
            const double pu = (u + 0.5) / oversample;
            const double pv = (v + 0.5) / oversample;
            rays.push_back(Ray{camera.position, camera.pixel_direction(pu, pv), std::nullopt});
        }
    }
    return rays;
}

RenderedViews render_views(const SceneSpec& scene) {
    if (scene.rig.cameras.empty()) {
        throw ValidationError("render_views: scene has no camera rig");
    }
    RenderedViews views;
    for (const auto& cam : scene.rig.cameras) {
        CameraRaster raster;
        raster.height = cam.height;
        raster.width = cam.width;
        raster.inverse_depth.assign(static_cast<std::size_t>(cam.height) * cam.width, 0.0);
        raster.mask.assign(raster.inverse_depth.size(), 0.0);
        const auto rays = camera_rays(cam, 1);
        for (std::size_t i = 0; i < rays.size(); ++i) {
            const auto t = cast(scene, rays[i], scene.rig.max_range);
            if (t && *t > 0.0) {
                raster.inverse_depth[i] = 1.0 / *t;
                raster.mask[i] = 1.0;
            }
        }
        views.cameras.push_back(std::move(raster));
    }
    return views;
}

RenderedViews drop_cameras(const RenderedViews& views, std::span<const int> keep) {
    if (keep.empty()) {
        throw ContractError("drop_cameras: keep set must not be empty");
    }
    std::vector<bool> kept(views.cameras.size(), false);
    for (int k : keep) {
        if (k < 0 || k >= static_cast<int>(views.cameras.size())) {
            throw ContractError("drop_cameras: camera index " + std::to_string(k) + " out of range");
        }
        kept[static_cast<std::size_t>(k)] = true;
    }
    RenderedViews out = views;
    for (std::size_t i = 0; i < out.cameras.size(); ++i) {
        if (!kept[i]) {
            std::fill(out.cameras[i].inverse_depth.begin(), out.cameras[i].inverse_depth.end(), 0.0);
            std::fill(out.cameras[i].mask.begin(), out.cameras[i].mask.end(), 0.0);
        }
    }
    return out;
}

void write_views(const std::filesystem::path& path, const RenderedViews& views) {
    binio::Writer out(path);
    out.magic("VIEW");
    out.put<std::uint32_t>(kViewVersion);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(views.cameras.size()));
    for (const auto& cam : views.cameras) {
        out.put<std::uint32_t>(static_cast<std::uint32_t>(cam.height));
        out.put<std::uint32_t>(static_cast<std::uint32_t>(cam.width));
    }
    for (const auto& cam : views.cameras) {
        for (double v : cam.inverse_depth) {
            out.put<float>(static_cast<float>(v));
        }
        for (double v : cam.mask) {
            out.put<float>(static_cast<float>(v));
        }
    }
    out.close();
}

RenderedViews read_views(const std::filesystem::path& path) {
    binio::Reader in(path);
    in.expect_magic("VIEW");
    const auto version = in.get<std::uint32_t>();
    if (version != kViewVersion) {
        throw IoError("unsupported VIEW version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    if (count > 4096) {
        throw IoError("VIEW camera count " + std::to_string(count) + " is implausible");
    }
    RenderedViews views;
    views.cameras.resize(count);
    std::uintmax_t expected = 0;
    for (auto& cam : views.cameras) {
        cam.height = static_cast<int>(in.get<std::uint32_t>());
        cam.width = static_cast<int>(in.get<std::uint32_t>());
        expected += 8ull * static_cast<std::uintmax_t>(cam.height) * static_cast<std::uintmax_t>(cam.width);
    }
    if (expected > std::filesystem::file_size(path)) {
        throw IoError("VIEW planes exceed the file size");
    }
    for (auto& cam : views.cameras) {
        const auto n = static_cast<std::size_t>(cam.height) * cam.width;
        cam.inverse_depth.resize(n);
        cam.mask.resize(n);
        for (auto& v : cam.inverse_depth) {
            v = in.get<float>();
        }
        for (auto& v : cam.mask) {
            v = in.get<float>();
        }
    }
    return views;
}

} // namespace occ
