// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/rendering.hpp"

#include "occfield/errors.hpp"
#include "occfield/model.hpp"
#include "occfield/rng.hpp"
#include "occfield/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace occ {

namespace {

struct March {
    std::size_t ray = 0;
    double t0 = 0.0;
    std::int64_t count = 0; // samples on [t0, t_end]
    std::int64_t next = 0;
    double transmittance = 1.0;
    RayDepth result;
};

std::optional<March> start_march(std::size_t index, const Ray& ray, const RayRenderConfig& cfg, const RoiBox& roi) {
    const auto clip = clip_ray_to_roi(ray, roi);
    if (!clip) {
        return std::nullopt;
    }
    const double t_end = std::min(clip->exit, cfg.max_range);
    March m;
    m.ray = index;
    m.t0 = clip->enter;
    m.count = t_end >= clip->enter ? static_cast<std::int64_t>(std::floor((t_end - clip->enter) / cfg.step)) + 1 : 0;
    return m;
}

// Samples landing a rounding error past the ROI face are pulled back in.
Vec3 sample_point(const Ray& ray, double t, const RoiBox& roi) {
    return ray.at(t).cwiseMax(roi.min()).cwiseMin(roi.max());
}

} // namespace

OccupancyFn field_occupancy(const OccupancyFieldHandle& handle) {
    return [&handle](std::span<const Vec3> pts) { return handle.query(pts); };
}

OccupancyFn oracle_occupancy(const SceneSpec& scene) {
    return [&scene](std::span<const Vec3> pts) {
        std::vector<double> out(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            out[i] = occupied(scene, pts[i]) ? 1.0 : 0.0;
        }
        return out;
    };
}

void RayRenderConfig::validate() const {
    if (!(step > 0.0) || !(max_range > 0.0)) {
        throw ConfigError("ray rendering needs step > 0 and max_range > 0");
    }
    if (!(min_transmittance >= 0.0) || segment < 1 || batch_rays < 1) {
        throw ConfigError("ray rendering needs min_transmittance >= 0, segment >= 1, batch_rays >= 1");
    }
}

void VoxelRenderConfig::validate() const {
    if (samples < 1) {
        throw ConfigError("voxel rendering needs samples >= 1");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("voxel threshold must lie in (0, 1)");
    }
    if (batch_voxels < 1) {
        throw ConfigError("voxel rendering needs batch_voxels >= 1");
    }
}

RayIntegration integrate_samples(std::span<const double> t, std::span<const double> occupancy) {
    if (t.size() != occupancy.size()) {
        throw DimensionError("integrate_samples: " + std::to_string(t.size()) + " distances, " +
                             std::to_string(occupancy.size()) + " occupancies");
    }
    RayIntegration out;
    out.weights.resize(t.size());
    out.transmittance.resize(t.size());
    double trans = 1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double o = occupancy[i];
        if (!(o >= 0.0 && o <= 1.0)) {
            throw OutOfRangeError("integrate_samples: occupancy " + std::to_string(o) + " outside [0, 1]");
        }
        out.transmittance[i] = trans;
        const double w = o * trans;
        out.weights[i] = w;
        out.depth += t[i] * w;
        out.total_weight += w;
        trans *= 1.0 - o;
    }
    return out;
}

std::vector<std::optional<RayDepth>> render_depths(const OccupancyFn& field, std::span<const Ray> rays,
                                                   const RayRenderConfig& cfg, const RoiBox& roi) {
    cfg.validate();
    std::vector<std::optional<RayDepth>> out(rays.size());
    std::vector<Vec3> points;
    std::vector<std::pair<std::size_t, std::int64_t>> owners; // (active slot, sample count)
    for (std::size_t begin = 0; begin < rays.size(); begin += static_cast<std::size_t>(cfg.batch_rays)) {
        const auto end = std::min(rays.size(), begin + static_cast<std::size_t>(cfg.batch_rays));
        std::vector<March> active;
        for (std::size_t i = begin; i < end; ++i) {
            if (auto m = start_march(i, rays[i], cfg, roi)) {
                active.push_back(*m);
            }
        }
        while (!active.empty()) {
            points.clear();
            owners.clear();
            for (std::size_t a = 0; a < active.size(); ++a) {
                auto& m = active[a];
                const auto n = std::min<std::int64_t>(cfg.segment, m.count - m.next);
                for (std::int64_t k = 0; k < n; ++k) {
                    const double t = m.t0 + static_cast<double>(m.next + k) * cfg.step;
                    points.push_back(sample_point(rays[m.ray], t, roi));
                }
                owners.emplace_back(a, n);
            }
            const auto occ = points.empty() ? std::vector<double>{} : field(points);
            if (occ.size() != points.size()) {
                throw ContractError("occupancy source returned the wrong number of values");
            }
            std::size_t cursor = 0;
            for (const auto& [a, n] : owners) {
                auto& m = active[a];
                for (std::int64_t k = 0; k < n; ++k, ++cursor) {
                    if (m.transmittance < cfg.min_transmittance && cfg.min_transmittance > 0.0) {
                        continue;
                    }
                    const double t = m.t0 + static_cast<double>(m.next + k) * cfg.step;
                    const double o = std::clamp(occ[cursor], 0.0, 1.0);
                    const double w = o * m.transmittance;
                    m.result.depth += t * w;
                    m.result.total_weight += w;
                    m.result.samples += 1;
                    m.transmittance *= 1.0 - o;
                }
                m.next += n;
            }
            std::vector<March> still;
            for (auto& m : active) {
                const bool opaque = cfg.min_transmittance > 0.0 && m.transmittance < cfg.min_transmittance;
                if (m.next >= m.count || opaque) {
                    out[m.ray] = m.result;
                } else {
                    still.push_back(m);
                }
            }
            active.swap(still);
        }
    }
    return out;
}

std::optional<RayDepth> render_ray_depth(const OccupancyFn& field, const Ray& ray, const RayRenderConfig& cfg,
                                         const RoiBox& roi) {
    return render_depths(field, std::span<const Ray>(&ray, 1), cfg, roi).front();
}

RenderedCloud render_point_cloud(const OccupancyFn& field, std::span<const Ray> rays, const RayRenderConfig& cfg,
                                 const RoiBox& roi, double weight_floor) {
    RenderedCloud out;
    if (!rays.empty()) {
        out.cloud.sensor_origin = rays.front().origin;
    }
    const auto depths = render_depths(field, rays, cfg, roi);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!depths[i] || depths[i]->total_weight < weight_floor) {
            ++out.dropped;
            continue;
        }
        out.cloud.points.push_back(rays[i].at(depths[i]->depth));
        out.ray_index.push_back(i);
    }
    return out;
}

Vec3 voxel_sample(const VoxelGrid& grid, std::int64_t linear, int m, std::uint64_t seed) {
    const auto c = grid.coords(linear);
    const std::uint64_t key = derive_seed(seed, static_cast<std::uint64_t>(linear), static_cast<std::uint64_t>(m));
    Vec3 u;
    for (int a = 0; a < 3; ++a) {
        u[a] = static_cast<double>(mix64(key + static_cast<std::uint64_t>(a)) >> 11) * 0x1.0p-53;
    }
    const Vec3 p = grid.voxel_min(c[0], c[1], c[2]) + u.cwiseProduct(grid.voxel_size);
    return p.cwiseMin(grid.roi.max());
}

VoxelGrid render_voxel_grid(const OccupancyFn& field, const RoiBox& roi, const Vec3& voxel_size,
                            const VoxelRenderConfig& cfg, std::vector<double>* scores) {
    cfg.validate();
    VoxelGrid grid = VoxelGrid::empty(roi, voxel_size);
    const std::int64_t n = grid.count();
    if (scores) {
        scores->assign(static_cast<std::size_t>(n), 0.0);
    }
    std::vector<Vec3> points;
    for (std::int64_t begin = 0; begin < n; begin += cfg.batch_voxels) {
        const auto end = std::min(n, begin + cfg.batch_voxels);
        points.clear();
        for (auto v = begin; v < end; ++v) {
            for (int m = 0; m < cfg.samples; ++m) {
                points.push_back(voxel_sample(grid, v, m, cfg.seed));
            }
        }
        const auto occ = field(points);
        if (occ.size() != points.size()) {
            throw ContractError("occupancy source returned the wrong number of values");
        }
        for (auto v = begin; v < end; ++v) {
            const auto base = static_cast<std::size_t>((v - begin) * cfg.samples);
            const double o = *std::max_element(occ.begin() + static_cast<std::ptrdiff_t>(base),
                                               occ.begin() + static_cast<std::ptrdiff_t>(base + cfg.samples));
            grid.occupancy[static_cast<std::size_t>(v)] = o >= cfg.threshold ? 1 : 0;
            if (scores) {
                (*scores)[static_cast<std::size_t>(v)] = o;
            }
        }
    }
    return grid;
}

void write_ray_debug_csv(const std::filesystem::path& path, std::span<const Ray> rays, const OccupancyFn& field,
                         const RayRenderConfig& cfg, const RoiBox& roi) {
    cfg.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "ray,i,t,o,T,w\n";
    char buf[160];
    for (std::size_t r = 0; r < rays.size(); ++r) {
        const auto m = start_march(r, rays[r], cfg, roi);
        if (!m) {
            continue;
        }
        std::vector<double> t(static_cast<std::size_t>(m->count));
        std::vector<Vec3> pts(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = m->t0 + static_cast<double>(i) * cfg.step;
            pts[i] = sample_point(rays[r], t[i], roi);
        }
        auto occ = field(pts);
        for (auto& o : occ) {
            o = std::clamp(o, 0.0, 1.0);
        }
        const auto integ = integrate_samples(t, occ);
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r, i, t[i], occ[i],
                          integ.transmittance[i], integ.weights[i]);
            out << buf;
        }
    }
}

} // namespace occ
