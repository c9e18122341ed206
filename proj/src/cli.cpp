// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/cli.hpp"

#include "json_util.hpp"
#include "occfield/errors.hpp"
#include "occfield/evaluation.hpp"
#include "occfield/experiment.hpp"
#include "occfield/model.hpp"
#include "occfield/rendering.hpp"
#include "occfield/simulator.hpp"
#include "occfield/supervision.hpp"
#include "occfield/training.hpp"
#include "occfield/version.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>

namespace occ::cli {

namespace fs = std::filesystem;
using jsonutil::json;

json RunManifest::to_json() const {
    json t = json::object();
    for (const auto& [stage, seconds] : timings) {
        t[stage] = seconds;
    }
    return json{{"command", command},
                {"argv", argv},
                {"version", kVersion},
                {"config", config},
                {"config_hash", config_hash(config)},
                {"seed", seed},
                {"threads", threads},
                {"inputs", inputs},
                {"outputs", outputs},
                {"timings_s", t},
                {"summary", summary},
                {"status", exit_code == 0 ? "ok" : "failed"},
                {"exit_code", exit_code},
                {"error", error}};
}

std::string config_hash(const json& config) {
    // Objects are key-sorted maps, so dump() is canonical.
    const std::string text = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

fs::path default_out_dir() {
    const char* env = std::getenv(kOutDirEnv);
    return env && *env ? fs::path(env) : fs::path(".");
}

/// Explicit path, else <OCCFIELD_OUT_DIR>/<name>.
fs::path resolve_out(const std::string& given, const std::string& name) {
    return given.empty() ? default_out_dir() / name : fs::path(given);
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
}

struct Context {
    RunManifest manifest;
    fs::path manifest_path;
    std::ostream* out = nullptr;

    template <typename F>
    auto timed(const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        auto record = [&] {
            manifest.timings[stage] +=
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            record();
        } else {
            auto r = f();
            record();
            return r;
        }
    }

    void input(const fs::path& p) { manifest.inputs.push_back(fs::absolute(p).lexically_normal().string()); }
    void output(const fs::path& p) { manifest.outputs.push_back(fs::absolute(p).lexically_normal().string()); }
};

struct CommonOptions {
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string manifest;
};

struct Command {
    std::string name;
    CLI::App* app = nullptr;
    /// Where the manifest goes when --manifest is absent.
    std::function<fs::path()> default_manifest;
    std::function<void(Context&)> action;
};

void add_common(Command& c, CommonOptions& common, bool with_seed) {
    if (with_seed) {
        c.app->add_option("--seed", common.seed, "Seed for every random draw of this command");
    }
    c.app->add_option("--threads", common.threads, "Worker cap (the pipeline runs single-threaded)")
        ->check(CLI::PositiveNumber);
    c.app->add_option("--manifest", common.manifest, "Manifest path (default: next to the outputs)");
}

fs::path manifest_beside(const fs::path& out) {
    fs::path p = out;
    p += ".manifest.json";
    return p;
}

json load_config(Context& ctx, const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    ctx.input(path);
    return jsonutil::load_file(path);
}

SceneSpec load_scene_input(Context& ctx, const std::string& path) {
    ctx.input(path);
    return ctx.timed("load", [&] { return load_scene(path); });
}

/// Occupancy source behind --checkpoint or --oracle.
struct FieldSource {
    std::shared_ptr<const OccupancyModel> model;
    std::unique_ptr<OccupancyFieldHandle> handle;
    OccupancyFn fn;
    RoiBox roi = RoiBox::desk();
};

struct FieldOptions {
    std::string checkpoint;
    bool oracle = false;
};

void add_field_options(CLI::App* app, FieldOptions& f, bool required) {
    auto* ck = app->add_option("--checkpoint", f.checkpoint, "VGTC model checkpoint");
    auto* orc = app->add_flag("--oracle", f.oracle, "Use the analytic scene indicator instead of a model");
    ck->excludes(orc);
    if (required) {
        app->require_option(1, 3);
    }
}

std::shared_ptr<const OccupancyModel> load_model(Context& ctx, const std::string& path) {
    ctx.input(path);
    return ctx.timed("load", [&] { return std::make_shared<const OccupancyModel>(load_checkpoint(path)); });
}

void check_model_fits(const OccupancyModel& model, const SceneSpec& scene) {
    if (!(model.config().roi == scene.roi)) {
        throw ContractError("scene ROI differs from the checkpoint's model.roi");
    }
    if (static_cast<int>(scene.rig.cameras.size()) != model.config().cameras) {
        throw ContractError("scene has " + std::to_string(scene.rig.cameras.size()) + " cameras, checkpoint expects " +
                            std::to_string(model.config().cameras));
    }
}

FieldSource open_field(Context& ctx, const FieldOptions& opts, const SceneSpec& scene, const std::vector<int>& drop) {
    FieldSource src;
    src.roi = scene.roi;
    if (opts.oracle) {
        if (!drop.empty()) {
            throw ConfigError("--drop-cameras needs --checkpoint; the oracle ignores images");
        }
        src.fn = oracle_occupancy(scene);
        return src;
    }
    if (opts.checkpoint.empty()) {
        throw ConfigError("one of --checkpoint or --oracle is required");
    }
    src.model = load_model(ctx, opts.checkpoint);
    check_model_fits(*src.model, scene);
    auto views = ctx.timed("views", [&] { return render_views(scene); });
    if (!drop.empty()) {
        std::vector<int> keep;
        for (int c = 0; c < static_cast<int>(views.cameras.size()); ++c) {
            if (std::find(drop.begin(), drop.end(), c) == drop.end()) {
                keep.push_back(c);
            }
        }
        for (const int d : drop) {
            if (d < 0 || d >= static_cast<int>(views.cameras.size())) {
                throw ConfigError("--drop-cameras: camera index " + std::to_string(d) + " out of range");
            }
        }
        views = drop_cameras(views, keep);
    }
    src.handle = ctx.timed("encode", [&] { return std::make_unique<OccupancyFieldHandle>(src.model, views); });
    src.fn = field_occupancy(*src.handle);
    return src;
}

/// Flag targets of every command; one command parses per run.
struct Options {
    CommonOptions common;
    FieldOptions field;
    std::string config;
    std::string out;
    std::string out_dir;
    std::string scene_path;
    std::string lidar_path;
    std::string pred;
    std::string table;
    std::string checkpoint;
    std::string runs_dir;
    std::string depths_csv;
    std::string sectors_csv;
    std::string debug_csv;
    std::vector<int> drop;
    int debug_rays = 8;
    bool with_visibility = false;
};

std::vector<Ray> gt_rays(Context& ctx, const SceneSpec& scene, const std::string& lidar_path) {
    if (!lidar_path.empty()) {
        ctx.input(lidar_path);
        return rays_from_cloud(read_lpcd(lidar_path));
    }
    return ctx.timed("simulate", [&] { return rays_from_cloud(simulate_lidar(scene)); });
}

// ---- scene gen -------------------------------------------------------------

Command scene_gen(CLI::App& parent, Options& o) {
    Command c;
    c.name = "scene gen";
    c.app = parent.add_subcommand("gen", "Generate a procedural scene");
    c.app->add_option("--config", o.config, "Generator config JSON");
    c.app->add_option("--out", o.out, "Scene JSON (default scene.json)");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "scene.json")); };
    c.action = [&o](Context& ctx) {
        const auto gen = SceneGenConfig::from_json(load_config(ctx, o.config));
        const std::uint64_t seed = o.common.seed.value_or(0);
        ctx.manifest.seed = seed;
        ctx.manifest.config = json{{"generator", gen.to_json()}, {"seed", seed}};
        const auto scene = ctx.timed("generate", [&] { return generate_scene(seed, gen); });
        const auto path = resolve_out(o.out, "scene.json");
        ensure_parent(path);
        save_scene(path, scene);
        ctx.output(path);
        ctx.manifest.summary = json{{"primitives", scene.primitives.size()}};
    };
    return c;
}

// ---- lidar sim / views render ----------------------------------------------

Command lidar_sim(CLI::App& parent, Options& o) {
    Command c;
    c.name = "lidar sim";
    c.app = parent.add_subcommand("sim", "Simulate the scene's LiDAR sweep");
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--out", o.out, "LPCD point cloud (default lidar.lpcd)");
    add_common(c, o.common, false);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "lidar.lpcd")); };
    c.action = [&o](Context& ctx) {
        const auto scene = load_scene_input(ctx, o.scene_path);
        ctx.manifest.config = json{{"scene", scene_to_json(scene)}};
        const auto cloud = ctx.timed("simulate", [&] { return simulate_lidar(scene); });
        const auto path = resolve_out(o.out, "lidar.lpcd");
        ensure_parent(path);
        write_lpcd(path, cloud);
        ctx.output(path);
        ctx.manifest.summary = json{{"points", cloud.points.size()}};
    };
    return c;
}

Command views_render(CLI::App& parent, Options& o) {
    Command c;
    c.name = "views render";
    c.app = parent.add_subcommand("render", "Render the camera rasters the model consumes");
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--out", o.out, "VIEW file (default views.view)");
    add_common(c, o.common, false);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "views.view")); };
    c.action = [&o](Context& ctx) {
        const auto scene = load_scene_input(ctx, o.scene_path);
        ctx.manifest.config = json{{"scene", scene_to_json(scene)}};
        const auto views = ctx.timed("render", [&] { return render_views(scene); });
        const auto path = resolve_out(o.out, "views.view");
        ensure_parent(path);
        write_views(path, views);
        ctx.output(path);
        ctx.manifest.summary = json{{"cameras", views.cameras.size()}};
    };
    return c;
}

// ---- labels make -----------------------------------------------------------

Command labels_make(CLI::App& parent, Options& o) {
    Command c;
    c.name = "labels make";
    c.app = parent.add_subcommand("make", "Sample labeled occupancy queries from LiDAR rays");
    c.app->add_option("--scene", o.scene_path, "Scene JSON (ROI and oracle check)")->required();
    c.app->add_option("--lidar", o.lidar_path, "LPCD sweep (default: simulate from the scene)");
    c.app->add_option("--config", o.config, "Sampling config JSON");
    c.app->add_option("--out", o.out, "LQRY file (default queries.lqry)");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "queries.lqry")); };
    c.action = [&o](Context& ctx) {
        const auto j = load_config(ctx, o.config);
        auto sc = j.empty() ? SamplingConfig::desk() : SamplingConfig::from_json(j);
        if (o.common.seed) {
            sc.seed = *o.common.seed;
        }
        sc.validate();
        ctx.manifest.seed = sc.seed;
        const auto scene = load_scene_input(ctx, o.scene_path);
        const auto rays = gt_rays(ctx, scene, o.lidar_path);
        ctx.manifest.config = json{{"sampling", sc.to_json()}, {"scene", scene_to_json(scene)}};
        const auto qs = ctx.timed("sample", [&] { return sample_queries(rays, sc, scene.roi); });
        const auto agree = ctx.timed("oracle", [&] { return validate_against_oracle(qs, scene); });
        const auto path = resolve_out(o.out, "queries.lqry");
        ensure_parent(path);
        write_lqry(path, qs);
        ctx.output(path);
        ctx.manifest.summary = json{{"positives", qs.positive_count()},
                                    {"negatives", qs.negative_count()},
                                    {"skipped_symmetric_rays", qs.skipped_symmetric_rays},
                                    {"discarded_out_of_roi", qs.discarded_out_of_roi},
                                    {"agreement", agree.overall},
                                    {"negative_agreement", agree.negatives},
                                    {"positive_agreement", agree.positives}};
        char buf[160];
        std::snprintf(buf, sizeof buf, "queries %zu  agreement: negatives %.6f positives %.6f\n", qs.size(),
                      agree.negatives, agree.positives);
        *ctx.out << buf;
    };
    return c;
}

// ---- train -----------------------------------------------------------------

Command train_cmd(CLI::App& parent, Options& o) {
    Command c;
    c.name = "train";
    c.app = parent.add_subcommand("train", "Train an occupancy model");
    c.app->add_option("--config", o.config, "Run config JSON (model, train, scenes)")->required();
    c.app->add_option("--out-dir", o.out_dir, "Run directory (default train/)");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return resolve_out(o.out_dir, "train") / "manifest.json"; };
    c.action = [&o](Context& ctx) {
        auto rc = RunConfig::from_json(load_config(ctx, o.config), fs::path(o.config).parent_path());
        if (o.common.seed) {
            rc.set_seed(*o.common.seed);
        }
        ctx.manifest.seed = rc.train.seed;
        json cfg = rc.to_json();
        cfg.erase("eval");
        ctx.manifest.config = cfg;
        const auto dir = resolve_out(o.out_dir, "train");
        std::vector<TrainingScene> scenes;
        ctx.timed("prepare", [&] {
            for (const auto& s : rc.scenes.load()) {
                check_model_fits(OccupancyModel(rc.model), s);
                scenes.push_back(prepare_scene(s));
            }
        });
        TrainOptions opt;
        opt.out_dir = dir;
        std::ostream& log = *ctx.out;
        const auto every = std::max<std::int64_t>(1, rc.train.iterations / 20);
        opt.on_step = [&log, every, &rc](const LossRecord& r) {
            if (r.step % every == 0 || r.step + 1 == rc.train.iterations) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "step %lld loss %.5f lr %.3e grad_norm %.3f\n",
                              static_cast<long long>(r.step), r.loss, r.lr, r.grad_norm);
                log << buf << std::flush;
            }
        };
        TrainResult result;
        try {
            result = ctx.timed("train", [&] { return train(scenes, rc.train, rc.model, opt); });
        } catch (...) {
            // Checkpoints written before the failure are still outputs.
            for (const auto& e : fs::directory_iterator(dir)) {
                if (e.path().extension() == ".vgtc") {
                    ctx.output(e.path());
                }
            }
            throw;
        }
        for (const auto& p : result.checkpoints) {
            ctx.output(p);
        }
        ctx.output(dir / "loss.csv");
        ctx.manifest.summary = json{{"steps", result.history.size()},
                                    {"final_loss", result.history.back().loss},
                                    {"parameters", result.model->parameter_count()}};
    };
    return c;
}

// ---- render rays / render voxels -------------------------------------------

double azimuth_deg(const Vec3& d) { return std::atan2(d.y(), d.x()) * 180.0 / std::numbers::pi; }

double angle_gap(double a, double b) {
    const double d = std::fmod(std::abs(a - b), 360.0);
    return std::min(d, 360.0 - d);
}

/// Per-camera azimuth sector comparison of full-view and camera-dropped depths.
void write_sector_csv(const fs::path& path, const SceneSpec& scene, std::span<const Ray> rays,
                      const std::vector<std::optional<RayDepth>>& full,
                      const std::vector<std::optional<RayDepth>>& dropped, const std::vector<int>& drop,
                      double weight_floor) {
    const auto& cams = scene.rig.cameras;
    std::vector<std::int64_t> count(cams.size(), 0);
    std::vector<double> sum_full(cams.size(), 0.0), sum_drop(cams.size(), 0.0), sum_abs(cams.size(), 0.0);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!full[i] || !dropped[i] || full[i]->total_weight < weight_floor ||
            dropped[i]->total_weight < weight_floor) {
            continue;
        }
        const double az = azimuth_deg(rays[i].direction);
        std::size_t best = 0;
        for (std::size_t c = 1; c < cams.size(); ++c) {
            if (angle_gap(az, cams[c].yaw_deg) < angle_gap(az, cams[best].yaw_deg)) {
                best = c;
            }
        }
        ++count[best];
        sum_full[best] += full[i]->depth;
        sum_drop[best] += dropped[i]->depth;
        sum_abs[best] += std::abs(full[i]->depth - dropped[i]->depth);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "camera,yaw_deg,dropped,rays,mean_depth_full,mean_depth_dropped,mean_abs_change\n";
    char buf[256];
    for (std::size_t c = 0; c < cams.size(); ++c) {
        const double n = count[c] > 0 ? static_cast<double>(count[c]) : std::nan("");
        const bool is_dropped = std::find(drop.begin(), drop.end(), static_cast<int>(c)) != drop.end();
        std::snprintf(buf, sizeof buf, "%zu,%.6g,%d,%lld,%.9g,%.9g,%.9g\n", c, cams[c].yaw_deg, is_dropped ? 1 : 0,
                      static_cast<long long>(count[c]), sum_full[c] / n, sum_drop[c] / n, sum_abs[c] / n);
        out << buf;
    }
}

Command render_rays(CLI::App& parent, Options& o) {
    Command c;
    c.name = "render rays";
    c.app = parent.add_subcommand("rays", "Render depths along LiDAR beams into a point cloud");
    add_field_options(c.app, o.field, false);
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--lidar", o.lidar_path, "LPCD whose rays are rendered (default: every beam of the sensor)");
    c.app->add_option("--config", o.config, "Eval config JSON (ray_step, max_range, weight_floor)");
    c.app->add_option("--drop-cameras", o.drop, "Camera indices to blank, e.g. 0,2")->delimiter(',');
    c.app->add_option("--out", o.out, "LPCD output (default rendered.lpcd)");
    c.app->add_option("--depths", o.depths_csv, "Per-ray CSV: ray,depth,total_weight");
    c.app->add_option("--sectors", o.sectors_csv, "Dropout comparison CSV (default <out>.sectors.csv)");
    c.app->add_option("--debug-csv", o.debug_csv, "Per-sample dump ray,i,t,o,T,w of the first rays");
    c.app->add_option("--debug-rays", o.debug_rays, "Rays in the debug dump")->check(CLI::NonNegativeNumber);
    add_common(c, o.common, false);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "rendered.lpcd")); };
    c.action = [&o](Context& ctx) {
        const auto ec = EvalConfig::from_json(load_config(ctx, o.config));
        const auto scene = load_scene_input(ctx, o.scene_path);
        const auto src = open_field(ctx, o.field, scene, o.drop);
        std::vector<Ray> rays;
        if (o.lidar_path.empty()) {
            rays = lidar_beam_rays(scene.lidar);
        } else {
            ctx.input(o.lidar_path);
            rays = rays_from_cloud(read_lpcd(o.lidar_path));
        }
        ctx.manifest.config = json{{"eval", ec.to_json()},
                                   {"scene", scene_to_json(scene)},
                                   {"field", o.field.oracle ? "oracle" : "checkpoint"},
                                   {"drop_cameras", o.drop}};
        const auto& rcfg = ec.pointmap.render;
        const auto depths = ctx.timed("render", [&] { return render_depths(src.fn, rays, rcfg, src.roi); });
        RenderedCloud rendered;
        rendered.cloud.sensor_origin = scene.lidar.origin;
        for (std::size_t i = 0; i < rays.size(); ++i) {
            if (depths[i] && depths[i]->total_weight >= ec.pointmap.weight_floor) {
                rendered.cloud.points.push_back(rays[i].at(depths[i]->depth));
                rendered.ray_index.push_back(i);
            } else {
                ++rendered.dropped;
            }
        }
        const auto path = resolve_out(o.out, "rendered.lpcd");
        ensure_parent(path);
        write_lpcd(path, rendered.cloud);
        ctx.output(path);
        if (!o.depths_csv.empty()) {
            ensure_parent(o.depths_csv);
            std::ofstream f(o.depths_csv, std::ios::trunc);
            f << "ray,depth,total_weight\n";
            char buf[96];
            for (std::size_t i = 0; i < rays.size(); ++i) {
                if (depths[i]) {
                    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, depths[i]->depth, depths[i]->total_weight);
                    f << buf;
                }
            }
            if (!f) {
                throw IoError("write failed on '" + o.depths_csv + "'");
            }
            ctx.output(o.depths_csv);
        }
        if (!o.debug_csv.empty()) {
            ensure_parent(o.debug_csv);
            const auto n = std::min<std::size_t>(rays.size(), static_cast<std::size_t>(o.debug_rays));
            write_ray_debug_csv(o.debug_csv, std::span<const Ray>(rays.data(), n), src.fn, rcfg, src.roi);
            ctx.output(o.debug_csv);
        }
        ctx.manifest.summary = json{{"rays", rays.size()},
                                    {"points", rendered.cloud.points.size()},
                                    {"dropped_rays", rendered.dropped}};
        if (!o.drop.empty()) {
            const auto reference = open_field(ctx, o.field, scene, {});
            const auto full = ctx.timed("render", [&] { return render_depths(reference.fn, rays, rcfg, src.roi); });
            fs::path sp = o.sectors_csv.empty() ? fs::path(path.string() + ".sectors.csv") : fs::path(o.sectors_csv);
            ensure_parent(sp);
            write_sector_csv(sp, scene, rays, full, depths, o.drop, ec.pointmap.weight_floor);
            ctx.output(sp);
        }
    };
    return c;
}

Command render_voxels(CLI::App& parent, Options& o) {
    Command c;
    c.name = "render voxels";
    c.app = parent.add_subcommand("voxels", "Voxelize the occupancy field");
    add_field_options(c.app, o.field, false);
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--config", o.config, "Eval config JSON (voxel_size, voxel_samples, voxel_threshold, voxel_seed)");
    c.app->add_flag("--visibility", o.with_visibility, "Attach the camera visibility mask");
    c.app->add_option("--out", o.out, "VOXG output (default voxels.voxg)");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "voxels.voxg")); };
    c.action = [&o](Context& ctx) {
        auto ec = EvalConfig::from_json(load_config(ctx, o.config));
        if (o.common.seed) {
            ec.occupancy.voxel.seed = *o.common.seed;
        }
        ctx.manifest.seed = ec.occupancy.voxel.seed;
        const auto scene = load_scene_input(ctx, o.scene_path);
        const auto src = open_field(ctx, o.field, scene, {});
        ctx.manifest.config = json{{"eval", ec.to_json()},
                                   {"scene", scene_to_json(scene)},
                                   {"field", o.field.oracle ? "oracle" : "checkpoint"},
                                   {"visibility", o.with_visibility}};
        auto grid = ctx.timed("voxelize", [&] {
            return render_voxel_grid(src.fn, src.roi, ec.occupancy.voxel_size, ec.occupancy.voxel);
        });
        if (o.with_visibility) {
            grid.visibility = ctx.timed("visibility", [&] {
                return visibility_mask(scene, grid, ec.occupancy.visibility_oversample);
            });
        }
        const auto path = resolve_out(o.out, "voxels.voxg");
        ensure_parent(path);
        write_voxg(path, grid);
        ctx.output(path);
        std::int64_t occupied_count = 0;
        for (const auto v : grid.occupancy) {
            occupied_count += v;
        }
        ctx.manifest.summary = json{{"dims", grid.dims}, {"occupied", occupied_count}};
    };
    return c;
}

// ---- eval ------------------------------------------------------------------

void print_report(std::ostream& out, const MetricReport& rep) {
    char buf[128];
    for (const auto& [k, v] : rep.metrics) {
        std::snprintf(buf, sizeof buf, "%s %.6f\n", k.c_str(), v);
        out << buf;
    }
}

Command eval_pointmap_cmd(CLI::App& parent, Options& o) {
    Command c;
    c.name = "eval pointmap";
    c.app = parent.add_subcommand("pointmap", "AbsRel and Chamfer distance against LiDAR returns");
    add_field_options(c.app, o.field, false);
    c.app->add_option("--pred", o.pred, "Predicted LPCD instead of a field")->excludes("--checkpoint")->excludes("--oracle");
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--lidar", o.lidar_path, "Ground-truth LPCD (default: simulate from the scene)");
    c.app->add_option("--config", o.config, "Eval config JSON");
    c.app->add_option("--out", o.out, "Report JSON (default pointmap.json)");
    add_common(c, o.common, false);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "pointmap.json")); };
    c.action = [&o](Context& ctx) {
        const auto ec = EvalConfig::from_json(load_config(ctx, o.config));
        const auto scene = load_scene_input(ctx, o.scene_path);
        const auto rays = gt_rays(ctx, scene, o.lidar_path);
        ctx.manifest.config = json{{"eval", ec.to_json()},
                                   {"scene", scene_to_json(scene)},
                                   {"field", !o.pred.empty() ? "cloud" : o.field.oracle ? "oracle" : "checkpoint"}};
        MetricReport rep;
        if (!o.pred.empty()) {
            ctx.input(o.pred);
            const auto cloud = read_lpcd(o.pred);
            rep = ctx.timed("score", [&] { return eval_pointmap_cloud(cloud, rays, scene.roi); });
        } else {
            const auto src = open_field(ctx, o.field, scene, {});
            rep = ctx.timed("score", [&] { return eval_pointmap(src.fn, scene, rays, src.roi, ec.pointmap); });
        }
        const auto path = resolve_out(o.out, "pointmap.json");
        ensure_parent(path);
        rep.save(path);
        ctx.output(path);
        ctx.manifest.summary = rep.to_json();
        print_report(*ctx.out, rep);
    };
    return c;
}

Command eval_occupancy_cmd(CLI::App& parent, Options& o) {
    Command c;
    c.name = "eval occupancy";
    c.app = parent.add_subcommand("occupancy", "F1 and IoU inside the camera-visible region");
    add_field_options(c.app, o.field, false);
    c.app->add_option("--pred", o.pred, "Predicted VOXG instead of a field")->excludes("--checkpoint")->excludes("--oracle");
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--config", o.config, "Eval config JSON");
    c.app->add_option("--out", o.out, "Report JSON (default occupancy.json)");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "occupancy.json")); };
    c.action = [&o](Context& ctx) {
        auto ec = EvalConfig::from_json(load_config(ctx, o.config));
        if (o.common.seed) {
            ec.occupancy.voxel.seed = *o.common.seed;
        }
        ctx.manifest.seed = ec.occupancy.voxel.seed;
        const auto scene = load_scene_input(ctx, o.scene_path);
        ctx.manifest.config = json{{"eval", ec.to_json()},
                                   {"scene", scene_to_json(scene)},
                                   {"field", !o.pred.empty() ? "grid" : o.field.oracle ? "oracle" : "checkpoint"}};
        MetricReport rep;
        if (!o.pred.empty()) {
            ctx.input(o.pred);
            const auto grid = read_voxg(o.pred);
            auto oc = ec.occupancy;
            oc.voxel_size = grid.voxel_size;
            const auto gt = ctx.timed("ground_truth", [&] { return ground_truth_grid(scene, grid.roi, oc); });
            const auto s = occupancy_scores(grid, gt);
            rep.metrics = {{"f1", s.f1}, {"iou", s.iou}};
            rep.counts = {{"visible_voxels", s.visible},
                          {"tp", s.counts.tp},
                          {"fp", s.counts.fp},
                          {"fn", s.counts.fn},
                          {"tn", s.counts.tn}};
            rep.config = ec.to_json();
        } else {
            const auto src = open_field(ctx, o.field, scene, {});
            rep = ctx.timed("score", [&] { return eval_occupancy(src.fn, scene, src.roi, ec.occupancy); });
        }
        const auto path = resolve_out(o.out, "occupancy.json");
        ensure_parent(path);
        rep.save(path);
        ctx.output(path);
        ctx.manifest.summary = rep.to_json();
        print_report(*ctx.out, rep);
    };
    return c;
}

// ---- rank ------------------------------------------------------------------

Command rank_cmd(CLI::App& parent, Options& o) {
    Command c;
    c.name = "rank";
    c.app = parent.add_subcommand("rank", "Average rank of each method over a results table");
    c.app->add_option("--table", o.table, "Results CSV")->required();
    c.app->add_option("--out", o.out, "Ranks CSV: method,<column ranks>,average_rank");
    add_common(c, o.common, false);
    c.default_manifest = [&o] {
        return o.out.empty() ? default_out_dir() / "rank.manifest.json" : manifest_beside(o.out);
    };
    c.action = [&o](Context& ctx) {
        ctx.input(o.table);
        const auto t = read_rank_table(o.table);
        json cfg{{"methods", t.methods}, {"columns", t.columns}, {"lower_is_better", t.lower_is_better}};
        ctx.manifest.config = cfg;
        const auto ranks = column_ranks(t);
        const auto avg = average_rank(t);
        json summary = json::object();
        char buf[160];
        for (std::size_t m = 0; m < t.methods.size(); ++m) {
            std::snprintf(buf, sizeof buf, "%s,%.10g\n", t.methods[m].c_str(), avg[m]);
            *ctx.out << buf;
            summary[t.methods[m]] = avg[m];
        }
        ctx.manifest.summary = summary;
        if (!o.out.empty()) {
            ensure_parent(o.out);
            std::ofstream f(o.out, std::ios::trunc);
            f << "method";
            for (const auto& col : t.columns) {
                f << ',' << col;
            }
            f << ",average_rank\n";
            for (std::size_t m = 0; m < t.methods.size(); ++m) {
                f << t.methods[m];
                for (const int r : ranks[m]) {
                    f << ',' << r;
                }
                std::snprintf(buf, sizeof buf, ",%.10g\n", avg[m]);
                f << buf;
            }
            if (!f) {
                throw IoError("write failed on '" + o.out + "'");
            }
            ctx.output(o.out);
        }
    };
    return c;
}

// ---- attn dump -------------------------------------------------------------

Command attn_dump(CLI::App& parent, Options& o) {
    Command c;
    c.name = "attn dump";
    c.app = parent.add_subcommand("dump", "Write projector attention matrices and argmax-camera maps");
    c.app->add_option("--checkpoint", o.checkpoint, "VGTC model checkpoint")->required();
    c.app->add_option("--scene", o.scene_path, "Scene JSON")->required();
    c.app->add_option("--out-dir", o.out_dir, "Output directory (default attn/)");
    add_common(c, o.common, false);
    c.default_manifest = [&o] { return resolve_out(o.out_dir, "attn") / "manifest.json"; };
    c.action = [&o](Context& ctx) {
        const auto scene = load_scene_input(ctx, o.scene_path);
        const auto model = load_model(ctx, o.checkpoint);
        check_model_fits(*model, scene);
        ctx.manifest.config = json{{"scene", scene_to_json(scene)}, {"model", model->config().to_json()}};
        AttentionRecord rec;
        ctx.timed("encode", [&] {
            diff::NoGradGuard guard;
            model->bev_grid(render_views(scene), &rec);
        });
        const auto dir = resolve_out(o.out_dir, "attn");
        fs::create_directories(dir);
        for (const auto& p : write_attention_csv(dir, rec, model->config().query_side)) {
            ctx.output(p);
        }
        ctx.manifest.summary = json{{"matrices", rec.entries.size()}};
    };
    return c;
}

// ---- ablate sampling -------------------------------------------------------

Command ablate_sampling_cmd(CLI::App& parent, Options& o) {
    Command c;
    c.name = "ablate sampling";
    c.app = parent.add_subcommand("sampling", "Train and score random, stratified and stratified+symmetric sampling");
    c.app->add_option("--config", o.config, "Run config JSON (model, train, scenes, eval_scenes, eval)")->required();
    c.app->add_option("--out", o.out, "Comparison CSV (default ablation.csv)");
    c.app->add_option("--runs-dir", o.runs_dir, "Keep each run's checkpoints and loss curve here");
    add_common(c, o.common, true);
    c.default_manifest = [&o] { return manifest_beside(resolve_out(o.out, "ablation.csv")); };
    c.action = [&o](Context& ctx) {
        auto rc = RunConfig::from_json(load_config(ctx, o.config), fs::path(o.config).parent_path());
        if (o.common.seed) {
            rc.set_seed(*o.common.seed);
        }
        ctx.manifest.seed = rc.train.seed;
        ctx.manifest.config = rc.to_json();
        std::optional<fs::path> runs;
        if (!o.runs_dir.empty()) {
            runs = fs::path(o.runs_dir);
        }
        const auto rows = ctx.timed("ablate", [&] { return ablate_sampling(rc, runs); });
        const auto path = resolve_out(o.out, "ablation.csv");
        ensure_parent(path);
        write_ablation_csv(path, rows);
        ctx.output(path);
        json summary = json::object();
        for (const auto& r : rows) {
            summary[to_string(r.strategy)] = json{{"final_loss", r.final_loss},
                                                  {"absrel", r.scores.absrel},
                                                  {"chamfer", r.scores.chamfer},
                                                  {"f1", r.scores.f1},
                                                  {"iou", r.scores.iou}};
        }
        ctx.manifest.summary = summary;
        std::ifstream f(path);
        *ctx.out << f.rdbuf();
    };
    return c;
}

int execute(Command& cmd, const CommonOptions& common, const std::vector<std::string>& argv, std::ostream& out,
            std::ostream& err) {
    Context ctx;
    ctx.out = &out;
    ctx.manifest.command = cmd.name;
    ctx.manifest.argv = argv;
    ctx.manifest.threads = common.threads;
    ctx.manifest.seed = common.seed.value_or(0);
    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    try {
        ctx.manifest_path = common.manifest.empty() ? cmd.default_manifest() : fs::path(common.manifest);
        cmd.action(ctx);
    } catch (const ValidationError& e) {
        code = 1;
        ctx.manifest.error = e.what();
    } catch (const RuntimeFailure& e) {
        code = 2;
        ctx.manifest.error = e.what();
    } catch (const fs::filesystem_error& e) {
        code = 2;
        ctx.manifest.error = e.what();
    } catch (const std::exception& e) {
        code = 2;
        ctx.manifest.error = std::string("internal error: ") + e.what();
    }
    ctx.manifest.exit_code = code;
    ctx.manifest.timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (code != 0) {
        err << "error: " << ctx.manifest.error << '\n';
    }
    if (!ctx.manifest_path.empty()) {
        try {
            ensure_parent(ctx.manifest_path);
            jsonutil::save_file(ctx.manifest_path, ctx.manifest.to_json());
        } catch (const std::exception& e) {
            err << "error: cannot write manifest: " << e.what() << '\n';
            code = code == 0 ? 2 : code;
        }
    }
    return code;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"occfield: occupancy fields from multi-camera rasters, trained on simulated LiDAR"};
    app.name("occfield");
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    auto* scene = app.add_subcommand("scene", "Procedural scenes")->require_subcommand(1);
    auto* lidar = app.add_subcommand("lidar", "LiDAR simulation")->require_subcommand(1);
    auto* views = app.add_subcommand("views", "Camera rasters")->require_subcommand(1);
    auto* labels = app.add_subcommand("labels", "Query supervision")->require_subcommand(1);
    auto* render = app.add_subcommand("render", "Ray and voxel rendering")->require_subcommand(1);
    auto* eval = app.add_subcommand("eval", "Metrics")->require_subcommand(1);
    auto* attn = app.add_subcommand("attn", "Attention inspection")->require_subcommand(1);
    auto* ablate = app.add_subcommand("ablate", "Ablations")->require_subcommand(1);

    Options o;
    std::vector<Command> commands;
    commands.push_back(scene_gen(*scene, o));
    commands.push_back(lidar_sim(*lidar, o));
    commands.push_back(views_render(*views, o));
    commands.push_back(labels_make(*labels, o));
    commands.push_back(train_cmd(app, o));
    commands.push_back(render_rays(*render, o));
    commands.push_back(render_voxels(*render, o));
    commands.push_back(eval_pointmap_cmd(*eval, o));
    commands.push_back(eval_occupancy_cmd(*eval, o));
    commands.push_back(rank_cmd(app, o));
    commands.push_back(attn_dump(*attn, o));
    commands.push_back(ablate_sampling_cmd(*ablate, o));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }
    for (auto& cmd : commands) {
        if (cmd.app->parsed()) {
            return execute(cmd, o.common, args, out, err);
        }
    }
    err << "error: no command given\n";
    return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, out, err);
}

} // namespace occ::cli
