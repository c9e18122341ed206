// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/errors.hpp"
#include "occfield/rng.hpp"
#include "occfield/simulator.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>

namespace occ {
namespace {

SceneSpec single(const Primitive& p) {
    SceneSpec s;
    s.primitives = {p};
    s.lidar.elevations_deg = {0.0};
    s.rig = CameraRig::surround(1, 8);
    return s;
}

TEST(Cast, UnitBoxAhead) {
    const auto s = single(Box{Vec3(2, 0, 0), Vec3::Constant(1.0)});
    const auto d = cast(s, Ray::make(Vec3::Zero(), Vec3::UnitX()));
    ASSERT_TRUE(d);
    EXPECT_NEAR(*d, 1.0, 1e-12);
}

TEST(Cast, SphereAhead) {
    const auto s = single(Sphere{Vec3(5, 0, 0), 1.0});
    const auto d = cast(s, Ray::make(Vec3::Zero(), Vec3::UnitX()));
    ASSERT_TRUE(d);
    EXPECT_NEAR(*d, 4.0, 1e-12);
}

TEST(Cast, MissAndRangeLimit) {
    const auto s = single(Sphere{Vec3(5, 0, 0), 1.0});
    EXPECT_FALSE(cast(s, Ray::make(Vec3::Zero(), -Vec3::UnitX())));
    EXPECT_FALSE(cast(s, Ray::make(Vec3::Zero(), Vec3::UnitX()), 3.5));
    EXPECT_FALSE(cast(s, Ray::make(Vec3(0, 1.01, 0), Vec3::UnitX())));
}

TEST(Cast, GroundFromAbove) {
    const auto s = single(GroundPlane{});
    const Vec3 dir = Vec3(1, 0, -1).normalized();
    const auto d = cast(s, Ray::make(Vec3(0, 0, 2), dir));
    ASSERT_TRUE(d);
    EXPECT_NEAR(*d, 2.0 * std::sqrt(2.0), 1e-12);
}

TEST(Cast, InsideSolidHitsAtZero) {
    const auto s = single(Box{Vec3::Zero(), Vec3::Constant(1.0)});
    const auto d = cast(s, Ray::make(Vec3(0.2, 0, 0), Vec3::UnitY()));
    ASSERT_TRUE(d);
    EXPECT_EQ(*d, 0.0);
}

TEST(Occupied, InteriorAirAndFaces) {
    SceneSpec s = single(Box{Vec3(2, 0, 1), Vec3(1, 1, 1)});
    s.primitives.push_back(Sphere{Vec3(-3, 0, 1), 0.5});
    s.primitives.push_back(GroundPlane{});
    EXPECT_TRUE(occupied(s, Vec3(2, 0, 1)));
    EXPECT_TRUE(occupied(s, Vec3(3, 0, 1)));
    EXPECT_TRUE(occupied(s, Vec3(-3, 0, 1.5)));
    EXPECT_TRUE(occupied(s, Vec3(10, 10, 0)));
    EXPECT_TRUE(occupied(s, Vec3(10, 10, -0.2)));
    EXPECT_FALSE(occupied(s, Vec3(10, 10, 0.01)));
    EXPECT_FALSE(occupied(s, Vec3(10, 10, -0.21)));
    EXPECT_FALSE(occupied(s, Vec3(3.001, 0, 1)));
    EXPECT_FALSE(occupied(s, Vec3(-3, 0, 1.51)));
}

TEST(Cast, SurfaceSeparatesFreeFromSolid) {
    Rng rng(21);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto scene = generate_scene(seed);
        for (int i = 0; i < 200; ++i) {
            const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            const auto ray = Ray::make(scene.lidar.origin, dir);
            const auto d = cast(scene, ray);
            if (!d) {
                for (double t = 0.0; t < scene.lidar.max_range; t += 0.1) {
                    EXPECT_FALSE(occupied(scene, ray.at(t)));
                }
                continue;
            }
            for (double frac : {0.0, 0.25, 0.5, 0.9, 0.999}) {
                EXPECT_FALSE(occupied(scene, ray.at(frac * *d))) << "seed " << seed << " t " << frac * *d;
            }
            EXPECT_TRUE(occupied(scene, ray.at(*d + 1e-9)));
        }
    }
}

TEST(Lidar, SelfConsistent) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto scene = generate_scene(seed);
        const auto cloud = simulate_lidar(scene);
        ASSERT_FALSE(cloud.points.empty());
        EXPECT_EQ(cloud.sensor_origin, scene.lidar.origin);
        for (const auto& ray : rays_from_cloud(cloud)) {
            const auto d = cast(scene, ray);
            ASSERT_TRUE(d);
            EXPECT_NEAR(*d, *ray.hit_distance, 1e-9);
        }
    }
}

TEST(Lidar, GroundOnlyDownwardRing) {
    SceneSpec s = single(GroundPlane{});
    s.lidar.origin = Vec3(0, 0, 2);
    s.lidar.azimuth_count = 8;
    s.lidar.elevations_deg = {-45.0, 10.0};
    const auto cloud = simulate_lidar(s);
    ASSERT_EQ(cloud.points.size(), 8u);
    for (const auto& p : cloud.points) {
        EXPECT_NEAR(p.z(), 0.0, 1e-9);
        EXPECT_NEAR(std::hypot(p.x(), p.y()), 2.0, 1e-9);
    }
    EXPECT_NEAR(cloud.points[0].y(), 0.0, 1e-9);
    EXPECT_GT(cloud.points[0].x(), 0.0);
}

TEST(Lidar, EmptySweep) {
    SceneSpec s = single(Sphere{Vec3(5, 0, 10), 1.0});
    s.lidar.origin = Vec3::Zero();
    EXPECT_THROW(simulate_lidar(s), EmptySweepError);
}

TEST(Views, WallFiveMeters) {
    SceneSpec s = single(Box{Vec3(5.5, 0, 0), Vec3(0.5, 20, 20)});
    Camera cam;
    cam.position = Vec3::Zero();
    cam.width = cam.height = 31;
    cam.cx = cam.cy = 15.5;
    s.rig.cameras = {cam};
    const auto views = render_views(s);
    ASSERT_EQ(views.cameras.size(), 1u);
    const auto& r = views.cameras[0];
    EXPECT_NEAR(r.inverse_depth[15 * 31 + 15], 0.2, 1e-12);
    EXPECT_EQ(r.mask[15 * 31 + 15], 1.0);
}

TEST(Views, MatchCast) {
    const auto scene = generate_scene(4);
    const auto views = render_views(scene);
    for (std::size_t c = 0; c < scene.rig.cameras.size(); ++c) {
        const auto rays = camera_rays(scene.rig.cameras[c]);
        const auto& raster = views.cameras[c];
        ASSERT_EQ(rays.size(), raster.inverse_depth.size());
        for (std::size_t i = 0; i < rays.size(); ++i) {
            const auto d = cast(scene, rays[i], scene.rig.max_range);
            if (d) {
                EXPECT_EQ(raster.mask[i], 1.0);
                EXPECT_NEAR(raster.inverse_depth[i], 1.0 / *d, 1e-9);
            } else {
                EXPECT_EQ(raster.mask[i], 0.0);
                EXPECT_EQ(raster.inverse_depth[i], 0.0);
            }
        }
    }
}

TEST(Views, IdenticalCamerasIdenticalRasters) {
    SceneSpec s = generate_scene(2);
    s.rig.cameras = {s.rig.cameras[0], s.rig.cameras[0]};
    s.rig.cameras[1].name = "copy";
    const auto views = render_views(s);
    EXPECT_EQ(views.cameras[0].inverse_depth, views.cameras[1].inverse_depth);
    EXPECT_EQ(views.cameras[0].mask, views.cameras[1].mask);
}

TEST(Views, PixelDirectionConvention) {
    Camera cam;
    cam.yaw_deg = 90.0;
    const Vec3 d = cam.pixel_direction(cam.cx, cam.cy);
    EXPECT_NEAR(d.y(), 1.0, 1e-12);
    Camera up;
    up.pitch_deg = 30.0;
    EXPECT_GT(up.pixel_direction(up.cx, up.cy).z(), 0.0);
    // Image row 0 looks above the optical axis.
    EXPECT_GT(cam.pixel_direction(cam.cx, 0.5).z(), 0.0);
}

TEST(Views, DropCameras) {
    const auto views = render_views(generate_scene(1));
    const std::vector<int> all{0, 1, 2, 3};
    EXPECT_EQ(drop_cameras(views, all), views);
    const std::vector<int> first{0};
    const auto kept = drop_cameras(views, first);
    ASSERT_EQ(kept.cameras.size(), views.cameras.size());
    EXPECT_EQ(kept.cameras[0].inverse_depth, views.cameras[0].inverse_depth);
    for (std::size_t c = 1; c < kept.cameras.size(); ++c) {
        for (double v : kept.cameras[c].inverse_depth) {
            EXPECT_EQ(v, 0.0);
        }
        for (double v : kept.cameras[c].mask) {
            EXPECT_EQ(v, 0.0);
        }
    }
    EXPECT_THROW(drop_cameras(views, std::vector<int>{}), ContractError);
    EXPECT_THROW(drop_cameras(views, std::vector<int>{4}), ContractError);
}

TEST(Views, FileRoundTrip) {
    const auto views = render_views(generate_scene(3));
    const auto path = std::filesystem::temp_directory_path() / "occfield_test_views.view";
    write_views(path, views);
    const auto back = read_views(path);
    ASSERT_EQ(back.cameras.size(), views.cameras.size());
    for (std::size_t c = 0; c < views.cameras.size(); ++c) {
        EXPECT_EQ(back.cameras[c].mask, views.cameras[c].mask);
        for (std::size_t i = 0; i < views.cameras[c].inverse_depth.size(); ++i) {
            EXPECT_NEAR(back.cameras[c].inverse_depth[i], views.cameras[c].inverse_depth[i], 1e-6);
        }
    }
}

TEST(Generator, DeterministicAndValid) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto a = generate_scene(seed);
        const auto b = generate_scene(seed);
        EXPECT_EQ(scene_to_json(a).dump(), scene_to_json(b).dump());
        EXPECT_NO_THROW(a.validate());
        EXPECT_EQ(a.rig.cameras.size(), 4u);
        EXPECT_EQ(a.lidar.elevations_deg.size() * static_cast<std::size_t>(a.lidar.azimuth_count), 32u * 360u);
        EXPECT_TRUE(std::holds_alternative<GroundPlane>(a.primitives.front()));
    }
    EXPECT_NE(scene_to_json(generate_scene(0)).dump(), scene_to_json(generate_scene(1)).dump());
}

TEST(SceneJson, RoundTripAndStrictness) {
    const auto scene = generate_scene(9);
    const auto j = scene_to_json(scene);
    EXPECT_EQ(scene_to_json(scene_from_json(j)).dump(), j.dump());

    auto extra = j;
    extra["colour"] = "red";
    EXPECT_THROW(scene_from_json(extra), ConfigError);
    auto version = j;
    version["version"] = 2;
    EXPECT_THROW(scene_from_json(version), ConfigError);
}

TEST(SceneJson, GeneratorConfigRejectsUnknownKeys) {
    EXPECT_THROW(SceneGenConfig::from_json(nlohmann::json{{"boxes", 3}}), ConfigError);
    const auto cfg = SceneGenConfig::from_json(nlohmann::json{{"camera_count", 6}});
    EXPECT_EQ(generate_scene(0, cfg).rig.cameras.size(), 6u);
}

TEST(SceneSpec, ValidateRejectsOutsidePrimitive) {
    SceneSpec s = single(Sphere{Vec3(100, 0, 0), 1.0});
    EXPECT_THROW(s.validate(), ValidationError);
    s.primitives = {};
    EXPECT_THROW(s.validate(), ValidationError);
}

} // namespace
} // namespace occ
