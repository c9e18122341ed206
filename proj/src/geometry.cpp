// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/geometry.hpp"

#include "binio.hpp"
#include "occfield/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace occ {

namespace {

constexpr std::uint32_t kLpcdVersion = 1;
constexpr std::uint32_t kVoxgVersion = 1;

std::string vec_str(const Vec3& v) {
    std::ostringstream out;
    out << '(' << v.x() << ", " << v.y() << ", " << v.z() << ')';
    return out.str();
}

} // namespace

RoiBox::RoiBox(const Vec3& min_corner, const Vec3& max_corner) : min_(min_corner), max_(max_corner) {
    if (!min_.allFinite() || !max_.allFinite() || !(min_.array() < max_.array()).all()) {
        throw ValidationError("ROI min " + vec_str(min_) + " must be componentwise below max " + vec_str(max_));
    }
}

RoiBox RoiBox::full_scale() { return {Vec3(-40.0, -40.0, -1.0), Vec3(40.0, 40.0, 5.4)}; }

RoiBox RoiBox::desk() { return {Vec3(-16.0, -16.0, -1.0), Vec3(16.0, 16.0, 5.4)}; }

bool RoiBox::contains(const Vec3& p) const {
    return (p.array() >= min_.array()).all() && (p.array() <= max_.array()).all();
}

Ray Ray::make(const Vec3& origin, const Vec3& direction, std::optional<double> hit) {
    if (!origin.allFinite() || !direction.allFinite()) {
        throw ValidationError("ray with non-finite origin or direction");
    }
    if (std::abs(direction.norm() - 1.0) > 1e-9) {
        throw ValidationError("ray direction " + vec_str(direction) + " is not unit length");
    }
    if (hit && !(*hit > 0.0 && std::isfinite(*hit))) {
        throw ValidationError("ray hit distance must be positive, got " + std::to_string(*hit));
    }
    return Ray{origin, direction, hit};
}

void PointCloud::validate() const {
    if (!sensor_origin.allFinite()) {
        throw ValidationError("point cloud sensor origin is not finite");
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!points[i].allFinite()) {
            throw ValidationError("point " + std::to_string(i) + " has non-finite coordinates");
        }
    }
}

std::array<std::int64_t, 3> voxel_dims(const RoiBox& roi, const Vec3& voxel_size) {
    if (!(voxel_size.array() > 0.0).all()) {
        throw ValidationError("voxel size must be positive, got " + vec_str(voxel_size));
    }
    std::array<std::int64_t, 3> dims{};
    const Vec3 extent = roi.extent();
    for (int a = 0; a < 3; ++a) {
        dims[a] = std::llround(extent[a] / voxel_size[a]);
        if (dims[a] < 1) {
            throw ValidationError("voxel size larger than the ROI along axis " + std::to_string(a));
        }
    }
    return dims;
}

VoxelGrid VoxelGrid::empty(const RoiBox& roi, const Vec3& voxel_size) {
    VoxelGrid grid;
    grid.roi = roi;
    grid.voxel_size = voxel_size;
    grid.dims = voxel_dims(roi, voxel_size);
    grid.occupancy.assign(static_cast<std::size_t>(grid.count()), 0);
    return grid;
}

std::array<std::int64_t, 3> VoxelGrid::coords(std::int64_t linear) const {
    const auto x = linear % dims[0];
    const auto rest = linear / dims[0];
    return {x, rest % dims[1], rest / dims[1]};
}

Vec3 VoxelGrid::voxel_min(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return roi.min() + Vec3(static_cast<double>(x) * voxel_size.x(), static_cast<double>(y) * voxel_size.y(),
                            static_cast<double>(z) * voxel_size.z());
}

Vec3 VoxelGrid::voxel_center(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return voxel_min(x, y, z) + 0.5 * voxel_size;
}

std::int64_t VoxelGrid::occupied_count() const {
    return std::count_if(occupancy.begin(), occupancy.end(), [](std::uint8_t v) { return v != 0; });
}

std::vector<Ray> rays_from_cloud(const PointCloud& cloud) {
    if (cloud.points.empty()) {
        throw ValidationError("rays_from_cloud: empty point cloud");
    }
    cloud.validate();
    std::vector<Ray> rays;
    rays.reserve(cloud.points.size());
    std::vector<std::size_t> degenerate;
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3 offset = cloud.points[i] - cloud.sensor_origin;
        const double d = offset.norm();
        if (d == 0.0) {
            degenerate.push_back(i);
            continue;
        }
        rays.push_back(Ray{cloud.sensor_origin, offset / d, d});
    }
    if (!degenerate.empty()) {
        std::ostringstream msg;
        msg << "degenerate ray(s): point coincides with the sensor origin at index";
        for (std::size_t k = 0; k < degenerate.size() && k < 16; ++k) {
            msg << ' ' << degenerate[k];
        }
        if (degenerate.size() > 16) {
            msg << " ... (" << degenerate.size() << " total)";
        }
        throw DegenerateRayError(msg.str());
    }
    return rays;
}

Vec3 normalize_point(const Vec3& p, const RoiBox& roi) {
    if (!roi.contains(p)) {
        throw OutOfRoiError("point " + vec_str(p) + " lies outside the ROI");
    }
    Vec3 q = (2.0 * (p - roi.min()).array() / roi.extent().array() - 1.0).matrix();
    return q.cwiseMax(-1.0).cwiseMin(1.0);
}

Vec3 denormalize_point(const Vec3& q, const RoiBox& roi) {
    return roi.min() + ((q.array() + 1.0) * 0.5 * roi.extent().array()).matrix();
}

std::optional<Interval> clip_ray_to_roi(const Ray& ray, const RoiBox& roi) {
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a];
        const double d = ray.direction[a];
        if (d == 0.0) {
            if (o < roi.min()[a] || o > roi.max()[a]) {
                return std::nullopt;
            }
            continue;
        }
        double t0 = (roi.min()[a] - o) / d;
        double t1 = (roi.max()[a] - o) / d;
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    if (t_far < t_near) {
        return std::nullopt;
    }
    return Interval{t_near, t_far};
}

void write_lpcd(const std::filesystem::path& path, const PointCloud& cloud) {
    binio::Writer out(path);
    out.magic("LPCD");
    out.put<std::uint32_t>(kLpcdVersion);
    for (int a = 0; a < 3; ++a) {
        out.put<float>(static_cast<float>(cloud.sensor_origin[a]));
    }
    out.put<std::uint64_t>(cloud.points.size());
    for (const auto& p : cloud.points) {
        for (int a = 0; a < 3; ++a) {
            out.put<float>(static_cast<float>(p[a]));
        }
    }
    out.close();
}

PointCloud read_lpcd(const std::filesystem::path& path) {
    binio::Reader in(path);
    in.expect_magic("LPCD");
    const auto version = in.get<std::uint32_t>();
    if (version != kLpcdVersion) {
        throw IoError("unsupported LPCD version " + std::to_string(version));
    }
    PointCloud cloud;
    for (int a = 0; a < 3; ++a) {
        cloud.sensor_origin[a] = in.get<float>();
    }
    const auto count = in.get<std::uint64_t>();
    const auto remaining = std::filesystem::file_size(path) - 28;
    if (count > remaining / 12) {
        throw IoError("LPCD point count " + std::to_string(count) + " exceeds the file size");
    }
    cloud.points.resize(count);
    for (auto& p : cloud.points) {
        for (int a = 0; a < 3; ++a) {
            p[a] = in.get<float>();
        }
    }
    return cloud;
}

void write_voxg(const std::filesystem::path& path, const VoxelGrid& grid) {
    if (static_cast<std::int64_t>(grid.occupancy.size()) != grid.count()) {
        throw ContractError("voxel grid occupancy size does not match its dims");
    }
    binio::Writer out(path);
    out.magic("VOXG");
    out.put<std::uint32_t>(kVoxgVersion);
    for (int a = 0; a < 3; ++a) {
        out.put<float>(static_cast<float>(grid.roi.min()[a]));
    }
    for (int a = 0; a < 3; ++a) {
        out.put<float>(static_cast<float>(grid.roi.max()[a]));
    }
    for (int a = 0; a < 3; ++a) {
        out.put<float>(static_cast<float>(grid.voxel_size[a]));
    }
    for (int a = 0; a < 3; ++a) {
        out.put<std::uint32_t>(static_cast<std::uint32_t>(grid.dims[a]));
    }
    out.bits(grid.occupancy);
    out.put<std::uint8_t>(grid.visibility ? 1 : 0);
    if (grid.visibility) {
        out.bits(*grid.visibility);
    }
    out.close();
}

VoxelGrid read_voxg(const std::filesystem::path& path) {
    binio::Reader in(path);
    in.expect_magic("VOXG");
    const auto version = in.get<std::uint32_t>();
    if (version != kVoxgVersion) {
        throw IoError("unsupported VOXG version " + std::to_string(version));
    }
    Vec3 lo, hi, size;
    for (int a = 0; a < 3; ++a) {
        lo[a] = in.get<float>();
    }
    for (int a = 0; a < 3; ++a) {
        hi[a] = in.get<float>();
    }
    for (int a = 0; a < 3; ++a) {
        size[a] = in.get<float>();
    }
    VoxelGrid grid;
    grid.roi = RoiBox(lo, hi);
    grid.voxel_size = size;
    for (int a = 0; a < 3; ++a) {
        grid.dims[a] = in.get<std::uint32_t>();
        if (grid.dims[a] == 0) {
            throw IoError("VOXG grid with a zero dimension");
        }
    }
    const auto n = static_cast<std::size_t>(grid.count());
    if (n / 8 > std::filesystem::file_size(path)) {
        throw IoError("VOXG dims exceed the file size");
    }
    grid.occupancy = in.bits(n);
    const auto flag = in.get<std::uint8_t>();
    if (flag == 1) {
        grid.visibility = in.bits(n);
    } else if (flag != 0) {
        throw IoError("VOXG visibility flag must be 0 or 1");
    }
    return grid;
}

} // namespace occ
